"""Geometric identities relating chart gradients to operator algebra.

Each ``check_*`` returns a raw residual; thresholds belong to callers. The
same relations give :func:`hessian_contraction` in closed form, which the SDE
drift uses instead of Christoffel symbols.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .operator_algebra import (
    HermitianOperator,
    as_operator,
    commutator,
    double_commutator_expectation,
    expectation,
)
from .projective_geometry import (
    ProjectivePoint,
    chart_decode,
    chart_encode,
    best_pivot,
    expectation_gradient,
    fubini_study_metric,
)


def random_hermitian(rng: np.random.Generator, dim: int, norm: float = 1.0) -> HermitianOperator:
    """Gaussian Hermitian matrix rescaled to the given spectral norm."""
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    m = 0.5 * (a + a.conj().T)
    return HermitianOperator(m * (norm / np.linalg.norm(m, 2)))


def random_state(rng: np.random.Generator, dim: int) -> np.ndarray:
    return rng.standard_normal(dim) + 1j * rng.standard_normal(dim)


def random_chart_point(rng: np.random.Generator, n: int) -> ProjectivePoint:
    """Random Gaussian state in its best chart (generally far from the origin)."""
    z = random_state(rng, n + 1)
    return chart_encode(z, best_pivot(z))


def _ev(M: np.ndarray, z: np.ndarray) -> complex:
    return np.vdot(z, M @ z) / np.vdot(z, z).real


def _variance_like_gradient(F: HermitianOperator, p: ProjectivePoint) -> np.ndarray:
    """Gradient of ``(F^2) - (F)^2``."""
    mean = expectation(F, p.homogeneous())
    return expectation_gradient(F.squared(), p) - 2.0 * mean * expectation_gradient(F, p)


def commutator_sides(F, G, p: ProjectivePoint) -> tuple[float, float]:
    F, G = as_operator(F), as_operator(G)
    m = fubini_study_metric(p)
    lhs = 2.0 * expectation_gradient(F, p) @ m.omega_upper @ expectation_gradient(G, p)
    rhs = (-1j * _ev(commutator(F, G), p.homogeneous())).real
    return float(lhs), float(rhs)


def anticommutator_sides(F, G, p: ProjectivePoint) -> tuple[float, float]:
    F, G = as_operator(F), as_operator(G)
    m = fubini_study_metric(p)
    z = p.homogeneous()
    lhs = 2.0 * expectation_gradient(F, p) @ m.g_inv @ expectation_gradient(G, p)
    anti = F.entries @ G.entries + G.entries @ F.entries
    rhs = _ev(anti, z).real - 2.0 * expectation(F, z) * expectation(G, z)
    return float(lhs), float(rhs)


def hessian_contraction(F, G, p: ProjectivePoint) -> float:
    """``grad^a(F) grad^b(F) Hess_ab(G)`` from operator expectations alone."""
    F, G = as_operator(F), as_operator(G)
    z = p.homogeneous()
    f, g = F.entries, G.entries
    eF, eG = expectation(F, z), expectation(G, z)
    fgf = _ev(f @ g @ f, z).real
    ff = _ev(f @ f, z).real
    anti = _ev(f @ g + g @ f, z).real
    return 0.5 * (fgf - ff * eG - eF * anti + 2.0 * eF * eF * eG)


def hessian_contraction_zderiv(F, G, p: ProjectivePoint) -> float:
    """Same contraction from explicit first and mixed second z-derivatives."""
    F, G = as_operator(F), as_operator(G)
    z = chart_decode(p).amplitudes
    nz = np.vdot(z, z).real
    eF, eG = expectation(F, z), expectation(G, z)
    dF_dzbar = (F.entries @ z - eF * z) / nz
    dF_dz = dF_dzbar.conj()
    g = G.entries
    zG = z.conj() @ g          # row vector conj(z)^gamma G_{gamma beta}
    Gz = g @ z
    hess = (nz * (g - np.eye(z.size) * eG)
            + 2.0 * np.outer(z, z.conj()) * eG
            - np.outer(z, zG)
            - np.outer(Gz, z.conj())) / nz**2
    val = nz**2 * (dF_dz @ hess @ dF_dzbar)
    return 0.5 * float(val.real)


def hessian_sides(F, G, p: ProjectivePoint) -> tuple[float, float]:
    return hessian_contraction_zderiv(F, G, p), hessian_contraction(F, G, p)


def chain_rule_sides(F, G, p: ProjectivePoint) -> tuple[float, float]:
    F, G = as_operator(F), as_operator(G)
    m = fubini_study_metric(p)
    z = p.homogeneous()
    lhs = -(m.g_inv @ _variance_like_gradient(F, p)) @ expectation_gradient(G, p)
    f, g = F.entries, G.entries
    ff = f @ f
    eF, eG = expectation(F, z), expectation(G, z)
    rhs = (-0.5 * _ev(ff @ g + g @ ff, z).real + _ev(ff, z).real * eG
           + eF * _ev(f @ g + g @ f, z).real - 2.0 * eF * eF * eG)
    return float(lhs), float(rhs)


def double_commutator_sides(F, G, p: ProjectivePoint) -> tuple[float, float]:
    F, G = as_operator(F), as_operator(G)
    m = fubini_study_metric(p)
    lhs = (hessian_contraction(F, G, p)
           - 0.5 * (m.g_inv @ _variance_like_gradient(F, p)) @ expectation_gradient(G, p))
    rhs = -0.25 * double_commutator_expectation(F, G, p.homogeneous())
    return float(lhs), float(rhs)


def check_commutator_identity(F, G, p: ProjectivePoint) -> float:
    lhs, rhs = commutator_sides(F, G, p)
    return abs(lhs - rhs)


def check_anticommutator_identity(F, G, p: ProjectivePoint) -> float:
    lhs, rhs = anticommutator_sides(F, G, p)
    return abs(lhs - rhs)


def check_hessian_identity(F, G, p: ProjectivePoint) -> float:
    lhs, rhs = hessian_sides(F, G, p)
    return abs(lhs - rhs)


def check_chain_rule_identity(F, G, p: ProjectivePoint) -> float:
    lhs, rhs = chain_rule_sides(F, G, p)
    return abs(lhs - rhs)


def check_double_commutator_identity(F, G, p: ProjectivePoint) -> float:
    lhs, rhs = double_commutator_sides(F, G, p)
    return abs(lhs - rhs)


CHECKS = {
    "commutator": check_commutator_identity,
    "anticommutator": check_anticommutator_identity,
    "hessian": check_hessian_identity,
    "chain_rule": check_chain_rule_identity,
    "double_commutator": check_double_commutator_identity,
}

SIDES = {
    "commutator": commutator_sides,
    "anticommutator": anticommutator_sides,
    "hessian": hessian_sides,
    "chain_rule": chain_rule_sides,
    "double_commutator": double_commutator_sides,
}


@dataclass
class ResidualSummary:
    count: int
    max: float
    mean: float
    median: float
    p99: float

    @classmethod
    def of(cls, r) -> "ResidualSummary":
        r = np.asarray(r, dtype=float)
        return cls(int(r.size), float(r.max()), float(r.mean()), float(np.median(r)),
                   float(np.quantile(r, 0.99)))


def run_identity_suite(n_draws: int = 200, dims=(1, 2, 3), seed: int = 0,
                       commuting_fraction: float = 0.25) -> dict:
    """Residuals of every identity over random (F, G, point) draws.

    A fraction of the draws use a G that commutes with F (a polynomial in F
    plus nothing else), so the vanishing double commutator is exercised too.
    Returns ``{check: {n: ResidualSummary}}`` plus the raw arrays under
    ``"raw"``.
    """
    rng = np.random.default_rng(seed)
    raw: dict[str, dict[int, list[float]]] = {k: {n: [] for n in dims} for k in CHECKS}
    for n in dims:
        for i in range(n_draws):
            F = random_hermitian(rng, n + 1)
            if i < commuting_fraction * n_draws:
                c = rng.standard_normal(3)
                G = HermitianOperator(c[0] * np.eye(n + 1) + c[1] * F.entries
                                      + c[2] * F.entries @ F.entries)
            else:
                G = random_hermitian(rng, n + 1)
            p = random_chart_point(rng, n)
            for name, check in CHECKS.items():
                raw[name][n].append(check(F, G, p))
    summary = {name: {n: ResidualSummary.of(v) for n, v in per.items()}
               for name, per in raw.items()}
    return {"summary": summary, "raw": raw}
