"""Product systems: additivity of observables and joint-vs-product evolution.

A trial of :func:`coupled_evolution` integrates the joint state under the
total Hamiltonian and every factor under its own Hamiltonian. With
``shared=True`` all of them read the Brownian path of stream
``(seed, (index, 0))``; with ``shared=False`` factor ``l`` reads channel
``l + 1`` instead, which is the negative control.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionError
from .ensemble import EnsembleStats, run_ensemble
from .noise import trajectory_key, wiener_increments
from .operator_algebra import (
    HermitianOperator,
    StateVector,
    as_operator,
    as_state,
    eigendecompose,
    embed_subsystem_operator,
    expectation,
    tensor_state,
    variance,
)
from .projective_geometry import infidelity, line_element
from .sde_engine import SdeConfig, TrajectoryRecord, evolve


@dataclass(frozen=True)
class CompositeSystem:
    dims: tuple
    subsystem_hams: tuple
    total_ham: HermitianOperator
    initial_parts: tuple

    @classmethod
    def build(cls, subsystem_hams: Sequence, initial_parts: Sequence | None = None) -> "CompositeSystem":
        hams = tuple(as_operator(h) for h in subsystem_hams)
        if not hams:
            raise DimensionError("a composite system needs at least one factor")
        dims = tuple(h.dim for h in hams)
        if initial_parts is None:
            initial_parts = [np.ones(d) / np.sqrt(d) for d in dims]
        parts = tuple(as_state(p) for p in initial_parts)
        _check_parts(dims, parts)
        total = sum((embed_subsystem_operator(h, i, dims).entries for i, h in enumerate(hams)),
                    start=np.zeros((int(np.prod(dims)),) * 2, dtype=complex))
        return cls(dims, hams, HermitianOperator(total), parts)

    @property
    def joint_initial(self) -> StateVector:
        return tensor_state(self.initial_parts)


def _check_parts(dims, parts):
    if len(parts) != len(dims):
        raise DimensionError(f"{len(parts)} parts for {len(dims)} factors")
    for i, (d, p) in enumerate(zip(dims, parts)):
        if as_state(p).dim != d:
            raise DimensionError(f"part {i} has dimension {as_state(p).dim}, factor has {d}")


def additivity_check(sys: CompositeSystem, parts: Sequence | None = None) -> tuple[float, float]:
    """``(|(H) - sum (H_l)|, |V - sum V_l|)`` on the product of ``parts``."""
    parts = sys.initial_parts if parts is None else tuple(as_state(p) for p in parts)
    _check_parts(sys.dims, parts)
    z = tensor_state(parts)
    dH = abs(expectation(sys.total_ham, z)
             - sum(expectation(h, p) for h, p in zip(sys.subsystem_hams, parts)))
    dV = abs(variance(sys.total_ham, z)
             - sum(variance(h, p) for h, p in zip(sys.subsystem_hams, parts)))
    return float(dH), float(dV)


def _quadratic_line_element(z, dz, eps):
    return (line_element(z, eps * dz) + line_element(z, -eps * dz)) / (2.0 * eps**2)


def _joint_displacement(parts, dzs, eps):
    """``(x)_l (z_l + eps dz_l) - (x)_l z_l`` expanded factor by factor, so no
    digits cancel however small ``eps`` is."""
    base = np.ones(1, dtype=complex)
    moved = np.zeros(1, dtype=complex)
    for p, d in zip(parts, dzs):
        z = p.amplitudes
        moved = np.kron(moved, z + eps * d) + np.kron(base, eps * d)
        base = np.kron(base, z)
    return base, moved


def metric_block_structure_check(sys: CompositeSystem, parts: Sequence | None = None,
                                 perturbations: Sequence | None = None, *,
                                 eps: float = 1e-7, rng: np.random.Generator | None = None) -> float:
    """``|ds2_joint - sum_l ds2_l|`` for factor-local perturbations ``dz_l``.

    Both sides are symmetric second differences of the finite line element,
    so they estimate the quadratic form itself. The joint side moves every
    factor at once, ``(x)_l (z_l + eps dz_l)``. Missing perturbations are
    drawn from ``rng``; a scalar 0 leaves that factor fixed.
    """
    parts = sys.initial_parts if parts is None else tuple(as_state(p) for p in parts)
    _check_parts(sys.dims, parts)
    if perturbations is None:
        rng = np.random.default_rng() if rng is None else rng
        perturbations = [rng.standard_normal(d) + 1j * rng.standard_normal(d) for d in sys.dims]
    dzs = [np.broadcast_to(np.asarray(d, dtype=complex), (dim,)) for d, dim in zip(perturbations, sys.dims)]
    local = sum(_quadratic_line_element(p.amplitudes, d, eps) for p, d in zip(parts, dzs))

    def joint_side(e):
        base, dz = _joint_displacement(parts, dzs, e)
        return line_element(base, dz)

    joint = (joint_side(eps) + joint_side(-eps)) / (2.0 * eps**2)
    return float(abs(joint - local))


@dataclass
class CoupledRun:
    """Joint and factor trajectories of one trial on a common recording grid."""

    times: np.ndarray
    joint: TrajectoryRecord
    parts: list
    divergence: np.ndarray
    shared: bool

    @property
    def max_divergence(self) -> float:
        return float(self.divergence.max())

    def csv_header(self) -> list[str]:
        return ["t", "divergence"] + [f"V_{l}" for l in range(len(self.parts))]

    def csv_rows(self) -> list[list[float]]:
        return [[float(t), float(d), *(float(p.variance[k]) for p in self.parts)]
                for k, (t, d) in enumerate(zip(self.times, self.divergence))]


def coupled_evolution(sys: CompositeSystem, cfg: SdeConfig, index: int = 0, *,
                      shared: bool = True, refine: int = 1) -> CoupledRun:
    """One trial of joint and per-factor evolution.

    Collapse stopping is switched off so every record covers the same grid.
    ``refine`` draws the path at ``cfg.dt / refine`` and sums it, so a run at
    ``dt`` with ``refine=2`` and a run at ``dt/2`` see the same path.
    """
    cfg = cfg.replace(stop_on_collapse=False)
    n = cfg.n_steps

    def path(channel):
        return wiener_increments(cfg.seed, trajectory_key(index, channel), n, cfg.dt, refine)

    common = path(0)
    joint = evolve(sys.joint_initial, sys.total_ham, cfg, index, dW=common)
    parts = [evolve(p, h, cfg, index, dW=common if shared else path(l + 1))
             for l, (h, p) in enumerate(zip(sys.subsystem_hams, sys.initial_parts))]
    prod = [tensor_state([p.states[k] for p in parts]) for k in range(joint.times.size)]
    div = np.array([infidelity(j, q) for j, q in zip(joint.states, prod)])
    return CoupledRun(times=joint.times, joint=joint, parts=parts, divergence=div, shared=shared)


@dataclass
class RefinementStudy:
    """Per-run maximum divergence at ``dt`` and at ``dt / 2`` on paired paths."""

    dt: float
    horizon: float
    shared: bool
    coarse: np.ndarray
    fine: np.ndarray

    @property
    def ratio(self) -> float:
        return float(self.coarse.mean() / self.fine.mean())

    @property
    def per_run_ratios(self) -> np.ndarray:
        return self.coarse / self.fine

    def first_order(self, band=(1.5, 3.0)) -> bool:
        return band[0] <= self.ratio <= band[1]

    def to_json_dict(self) -> dict:
        return {
            "dt": self.dt, "horizon": self.horizon, "shared_noise": self.shared,
            "n_runs": int(self.coarse.size), "ratio": self.ratio,
            "mean_max_divergence_coarse": float(self.coarse.mean()),
            "mean_max_divergence_fine": float(self.fine.mean()),
            "max_divergence_coarse": [float(v) for v in self.coarse],
            "max_divergence_fine": [float(v) for v in self.fine],
        }


def refinement_study(sys: CompositeSystem, cfg: SdeConfig, n_runs: int = 20, *,
                     shared: bool = True) -> RefinementStudy:
    """Run trials ``0 .. n_runs-1`` at ``cfg.dt`` and ``cfg.dt / 2`` on the same paths.

    The horizon is ``cfg.t_final``. The ratio of mean maximum divergences is
    close to 2 when the product tracks the joint state to first order in dt.
    """
    fine_cfg = cfg.replace(dt=cfg.dt / 2, record_every=2 * cfg.record_every)
    coarse = np.array([coupled_evolution(sys, cfg, i, shared=shared, refine=2).max_divergence
                       for i in range(n_runs)])
    fine = np.array([coupled_evolution(sys, fine_cfg, i, shared=shared).max_divergence
                     for i in range(n_runs)])
    return RefinementStudy(dt=cfg.dt, horizon=cfg.t_final, shared=shared, coarse=coarse, fine=fine)


@dataclass
class SubsystemBornRecord:
    factor: int
    stats: EnsembleStats = field(repr=False)

    def to_json_dict(self) -> dict:
        return {"factor": self.factor, **self.stats.to_json_dict()}


def subsystem_born_check(sys: CompositeSystem, cfg: SdeConfig, n_traj: int, *,
                         shared: bool = True, threads: int = 0) -> list[SubsystemBornRecord]:
    """Collapse statistics of each factor over trials ``0 .. n_traj-1``.

    Each factor is run with the noise it receives inside
    :func:`coupled_evolution`, so these are the marginals of the coupled
    trials; the joint trajectory itself is not needed for them.
    """
    out = []
    for l, (h, p) in enumerate(zip(sys.subsystem_hams, sys.initial_parts)):
        stats = run_ensemble(p, h, cfg, n_traj, threads=threads, eig=eigendecompose(h),
                             key_channel=0 if shared else l + 1)
        out.append(SubsystemBornRecord(l, stats))
    return out


def separation_defect(sys: CompositeSystem, parts: Sequence | None = None, sigma: float = 1.0) -> float:
    """Norm of the Ito drift mismatch between joint and product evolution.

    With ``A_l = H_l - (H_l)`` the product of factor solutions driven by one
    Wiener process picks up ``sigma^2/4 sum_{l != m} A_l A_m`` from the Ito
    cross terms, while the joint equation carries the opposite sign. The
    difference ``sigma^2/2 sum_{l<m} (A_l z_l) (x) (A_m z_m)`` is orthogonal to
    the product state and has norm ``sigma^2/2 sqrt(sum_{l<m} V_l V_m)``.
    Short-time infidelity therefore grows like ``(defect * t)^2``.
    """
    parts = sys.initial_parts if parts is None else tuple(as_state(p) for p in parts)
    _check_parts(sys.dims, parts)
    V = [variance(h, p) for h, p in zip(sys.subsystem_hams, parts)]
    s = sum(V[l] * V[m] for l in range(len(V)) for m in range(l + 1, len(V)))
    return 0.5 * sigma**2 * float(np.sqrt(s))
