"""Affine charts on projective Hilbert space and the Fubini-Study geometry.

A chart is fixed by a pivot index ``k``: ``t_j = z_j / z_k`` for the ``n``
non-pivot indices in ascending order, packed into real coordinates as
``x = (Re t_1, Im t_1, Re t_2, Im t_2, ...)``.

Gradients are taken at fixed pivot amplitude, which is legitimate because
expectation values are homogeneous of degree zero in ``z`` and ``conj(z)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ChartError, DimensionError
from .operator_algebra import (
    HermitianOperator,
    StateVector,
    as_operator,
    as_state,
    expectation,
)

PIVOT_EPS = 1e-8


@dataclass(frozen=True)
class ProjectivePoint:
    x: np.ndarray
    pivot: int

    def __post_init__(self):
        x = np.array(self.x, dtype=float).reshape(-1)
        if x.size % 2:
            raise DimensionError(f"chart coordinates must have even length, got {x.size}")
        if not 0 <= self.pivot <= x.size // 2:
            raise DimensionError(f"pivot {self.pivot} out of range for n = {x.size // 2}")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        """Complex dimension of the projective space (ambient dimension minus one)."""
        return self.x.size // 2

    @property
    def t(self) -> np.ndarray:
        return unpack(self.x)

    def homogeneous(self) -> np.ndarray:
        """Unnormalized representative with amplitude 1 at the pivot."""
        return _insert_pivot(self.t, self.pivot)


@dataclass(frozen=True)
class MetricBundle:
    g: np.ndarray
    g_inv: np.ndarray
    omega_upper: np.ndarray
    evaluated_at: ProjectivePoint


def pack(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=complex)
    x = np.empty(2 * t.size)
    x[0::2] = t.real
    x[1::2] = t.imag
    return x


def unpack(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[0::2] + 1j * x[1::2]


def _insert_pivot(t: np.ndarray, pivot: int) -> np.ndarray:
    return np.insert(np.asarray(t, dtype=complex), pivot, 1.0)


@lru_cache(maxsize=None)
def _omega_cached(n: int) -> np.ndarray:
    w = np.zeros((2 * n, 2 * n))
    for j in range(n):
        w[2 * j, 2 * j + 1] = 1.0
        w[2 * j + 1, 2 * j] = -1.0
    w.setflags(write=False)
    return w


def omega(n: int) -> np.ndarray:
    """The constant tensor with ``+1`` at (2j-1, 2j) and ``-1`` at (2j, 2j-1)."""
    return _omega_cached(n)


def best_pivot(z) -> int:
    """Index of the largest-modulus amplitude; ties go to the lowest index."""
    a = np.abs(as_state(z).amplitudes)
    return int(np.argmax(a))


def chart_encode(z, pivot: int, eps: float = PIVOT_EPS) -> ProjectivePoint:
    a = as_state(z).amplitudes
    if not 0 <= pivot < a.size:
        raise DimensionError(f"pivot {pivot} out of range for dimension {a.size}")
    mags = np.abs(a)
    if mags[pivot] <= eps * mags.max():
        raise ChartError(
            f"pivot amplitude |z[{pivot}]| = {mags[pivot]:.3e} below {eps:.0e} x max; re-pivot")
    t = np.delete(a, pivot) / a[pivot]
    return ProjectivePoint(pack(t), pivot)


def chart_decode(p: ProjectivePoint) -> StateVector:
    z = p.homogeneous()
    return StateVector(z / np.linalg.norm(z))


def line_element(z, dz) -> float:
    """``4 (1 - |<z|z+dz>|^2 / (<z|z><z+dz|z+dz>))`` for a finite displacement.

    The numerator is evaluated as ``1/2 sum_ij |z_i dz_j - z_j dz_i|^2``
    (Lagrange's identity), which avoids cancellation for small ``dz``.
    """
    a = as_state(z).amplitudes
    dz = np.asarray(dz, dtype=complex)
    b = a + dz
    wedge = np.outer(a, dz) - np.outer(dz, a)
    num = 0.5 * float(np.sum(np.abs(wedge) ** 2))
    return 4.0 * num / (np.vdot(a, a).real * np.vdot(b, b).real)


def fubini_study_metric(p: ProjectivePoint) -> MetricBundle:
    x = p.x
    w = omega(p.n)
    wx = w @ x
    r2 = float(x @ x)
    outer = np.outer(x, x) + np.outer(wx, wx)
    eye = np.eye(x.size)
    g = 4.0 * ((1.0 + r2) * eye - outer) / (1.0 + r2) ** 2
    g_inv = 0.25 * (1.0 + r2) * (eye + outer)
    omega_up = g_inv @ w
    # exact symmetry / antisymmetry, independent of roundoff in the products
    g = 0.5 * (g + g.T)
    g_inv = 0.5 * (g_inv + g_inv.T)
    omega_up = 0.5 * (omega_up - omega_up.T)
    for a in (g, g_inv, omega_up):
        a.setflags(write=False)
    return MetricBundle(g=g, g_inv=g_inv, omega_upper=omega_up, evaluated_at=p)


def _check(F: HermitianOperator, p: ProjectivePoint):
    if F.dim != p.n + 1:
        raise DimensionError(f"operator dimension {F.dim} does not match chart dimension {p.n + 1}")


def expectation_gradient(F, p: ProjectivePoint) -> np.ndarray:
    """Covariant gradient of ``(F)`` in chart coordinates.

    With ``z`` the pivot-normalized representative,
    ``d(F)/d conj(z_j) = (F z - (F) z)_j / <z|z>``; the real and imaginary
    chart directions pick up twice its real and imaginary parts.
    """
    F = as_operator(F)
    _check(F, p)
    z = p.homogeneous()
    nz = np.vdot(z, z).real
    Fz = F.entries @ z
    mean = np.vdot(z, Fz).real / nz
    u = np.delete((Fz - mean * z) / nz, p.pivot)
    return 2.0 * pack(u)


def raised_gradient(F, p: ProjectivePoint, metric: MetricBundle | None = None) -> np.ndarray:
    if metric is None:
        metric = fubini_study_metric(p)
    return metric.g_inv @ expectation_gradient(F, p)


def variance_gradient(H, p: ProjectivePoint) -> np.ndarray:
    H = as_operator(H)
    mean = expectation(H, p.homogeneous())
    return expectation_gradient(H.squared(), p) - 2.0 * mean * expectation_gradient(H, p)


def ray_fidelity(a, b) -> float:
    a, b = as_state(a).amplitudes, as_state(b).amplitudes
    return abs(np.vdot(a, b)) ** 2 / (np.vdot(a, a).real * np.vdot(b, b).real)


def infidelity(a, b) -> float:
    """``1 - ray_fidelity(a, b)`` without cancellation near 1."""
    a = as_state(a).amplitudes
    return 0.25 * line_element(a, as_state(b).amplitudes - a)
