"""Hilbert-space primitives: states, Hermitian operators, expectations.

States are rays: every scalar computed here is invariant under ``z -> lam*z``.
Tensor products use the Kronecker convention with the leftmost factor varying
slowest, i.e. ``tensor_state([a, b])[i*len(b) + j] == a[i]*b[j]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConvergenceError, DimensionError, ZeroStateError

_IMAG_TOL = 1e-12


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class StateVector:
    """Complex amplitude vector representing a ray; never the zero vector."""

    amplitudes: np.ndarray

    def __post_init__(self):
        a = np.array(self.amplitudes, dtype=complex).reshape(-1)
        if a.size == 0 or not np.any(np.abs(a) > 0):
            raise ZeroStateError("the zero vector is not a state")
        object.__setattr__(self, "amplitudes", _readonly(a))

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def norm_sq(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def normalized(self) -> "StateVector":
        return StateVector(self.amplitudes / math.sqrt(self.norm_sq()))

    def __len__(self):
        return self.dim

    def __array__(self, dtype=None, copy=None):
        return self.amplitudes if dtype is None else self.amplitudes.astype(dtype)


@dataclass(frozen=True)
class HermitianOperator:
    """Dense Hermitian matrix; Hermiticity is enforced as ``(F + F^dag)/2``."""

    entries: np.ndarray

    def __post_init__(self):
        m = np.array(self.entries, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"operator must be square, got shape {m.shape}")
        m = 0.5 * (m + m.conj().T)
        object.__setattr__(self, "entries", _readonly(m))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def __matmul__(self, other: "HermitianOperator") -> np.ndarray:
        return self.entries @ as_operator(other).entries

    def squared(self) -> "HermitianOperator":
        return HermitianOperator(self.entries @ self.entries)

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)


@dataclass(frozen=True)
class EigenDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: tuple[StateVector, ...]
    degeneracy_groups: tuple[tuple[int, ...], ...]
    sweeps: int = field(default=0, compare=False)

    @property
    def matrix(self) -> np.ndarray:
        """Eigenvectors as the columns of a unitary matrix."""
        return np.column_stack([v.amplitudes for v in self.eigenvectors])

    def group_values(self) -> np.ndarray:
        return np.array([self.eigenvalues[list(g)].mean() for g in self.degeneracy_groups])

    def group_projectors(self) -> list[HermitianOperator]:
        U = self.matrix
        out = []
        for g in self.degeneracy_groups:
            cols = U[:, list(g)]
            out.append(HermitianOperator(cols @ cols.conj().T))
        return out


def as_state(z) -> StateVector:
    return z if isinstance(z, StateVector) else StateVector(z)


def as_operator(F) -> HermitianOperator:
    return F if isinstance(F, HermitianOperator) else HermitianOperator(F)


def _check_dims(F: HermitianOperator, z: StateVector):
    if F.dim != z.dim:
        raise DimensionError(f"operator dimension {F.dim} does not match state dimension {z.dim}")


def _quotient(M: np.ndarray, z: np.ndarray) -> float:
    num = np.vdot(z, M @ z)
    den = np.vdot(z, z).real
    q = num / den
    if abs(q.imag) > _IMAG_TOL * max(1.0, abs(q.real)):
        raise ValueError(f"expectation has imaginary part {q.imag:.3e}; operator not Hermitian?")
    return float(q.real)


def expectation(F, z) -> float:
    """``<z|F|z>/<z|z>``."""
    F, z = as_operator(F), as_state(z)
    _check_dims(F, z)
    return _quotient(F.entries, z.amplitudes)


def variance(F, z) -> float:
    """``(F^2) - (F)^2``, clamped at zero."""
    F, z = as_operator(F), as_state(z)
    _check_dims(F, z)
    a = z.amplitudes
    mean = _quotient(F.entries, a)
    Fa = F.entries @ a
    # (F^2) = |F z|^2 / |z|^2 is exactly real
    sq = float(np.vdot(Fa, Fa).real / np.vdot(a, a).real)
    return max(sq - mean * mean, 0.0)


def commutator(F, G) -> np.ndarray:
    F, G = as_operator(F).entries, as_operator(G).entries
    return F @ G - G @ F


def double_commutator_expectation(F, G, z) -> float:
    """Expectation of ``[F,[F,G]]``, which is Hermitian for Hermitian F, G."""
    F, G, z = as_operator(F), as_operator(G), as_state(z)
    if F.dim != G.dim:
        raise DimensionError(f"operator dimensions differ: {F.dim} vs {G.dim}")
    _check_dims(F, z)
    C = commutator(F, G)
    return _quotient(F.entries @ C - C @ F.entries, z.amplitudes)


def projector(v) -> HermitianOperator:
    v = as_state(v).amplitudes
    return HermitianOperator(np.outer(v, v.conj()) / np.vdot(v, v).real)


# -- eigendecomposition by cyclic complex Jacobi rotations --------------------


def _jacobi_rotate(A: np.ndarray, V: np.ndarray, p: int, q: int):
    apq = A[p, q]
    mag = abs(apq)
    phase = apq / mag
    # tan(2 theta) = 2|a_pq| / (a_qq - a_pp), rotation acting on columns p, q
    theta = 0.5 * math.atan2(2.0 * mag, (A[q, q] - A[p, p]).real)
    c, s = math.cos(theta), math.sin(theta)
    U = np.array([[c, s], [-s * np.conj(phase), c * np.conj(phase)]], dtype=complex)
    idx = [p, q]
    A[:, idx] = A[:, idx] @ U
    A[idx, :] = U.conj().T @ A[idx, :]
    A[p, q] = A[q, p] = 0.0
    A[p, p] = A[p, p].real
    A[q, q] = A[q, q].real
    V[:, idx] = V[:, idx] @ U


def _fix_phase(v: np.ndarray) -> np.ndarray:
    mags = np.abs(v)
    k = int(np.flatnonzero(mags >= mags.max() - 1e-12)[0])
    return v * (abs(v[k]) / v[k])


def group_eigenvalues(eigenvalues: np.ndarray, tol: float) -> tuple[tuple[int, ...], ...]:
    """Chain ascending eigenvalues whose neighbours differ by at most ``tol``."""
    groups: list[list[int]] = [[0]]
    for k in range(1, len(eigenvalues)):
        if eigenvalues[k] - eigenvalues[k - 1] <= tol:
            groups[-1].append(k)
        else:
            groups.append([k])
    return tuple(tuple(g) for g in groups)


def eigendecompose(H, tau_degen: float | None = None, *, tol: float = 1e-14,
                   max_sweeps: int = 60) -> EigenDecomposition:
    """Diagonalize a Hermitian matrix with cyclic Jacobi sweeps.

    ``tau_degen`` defaults to ``1e-9`` times the spectral range. Eigenvector
    phases are fixed so that the first largest-modulus component is real and
    positive.
    """
    H = as_operator(H)
    n = H.dim
    A = np.array(H.entries, dtype=complex)
    V = np.eye(n, dtype=complex)
    scale = max(np.linalg.norm(A), np.finfo(float).tiny)
    sweeps = 0
    off = 0.0
    while True:
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off <= tol * scale or n == 1:
            break
        if sweeps >= max_sweeps:
            raise ConvergenceError(
                f"Jacobi did not converge: {sweeps} sweeps, off-diagonal norm {off:.3e} "
                f"(relative {off / scale:.3e}, target {tol:.1e})")
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(A[p, q]) > 1e-300:
                    _jacobi_rotate(A, V, p, q)
        sweeps += 1
    evals = np.diag(A).real.copy()
    order = np.argsort(evals, kind="stable")
    evals = evals[order]
    vecs = tuple(StateVector(_fix_phase(V[:, k])) for k in order)
    if tau_degen is None:
        tau_degen = 1e-9 * (evals[-1] - evals[0])
    return EigenDecomposition(
        eigenvalues=_readonly(evals),
        eigenvectors=vecs,
        degeneracy_groups=group_eigenvalues(evals, tau_degen),
        sweeps=sweeps,
    )


# -- tensor products -----------------------------------------------------------


def tensor_state(parts: Sequence) -> StateVector:
    if len(parts) == 0:
        raise DimensionError("tensor_state needs at least one factor")
    out = np.ones(1, dtype=complex)
    for p in parts:
        out = np.kron(out, as_state(p).amplitudes)
    return StateVector(out)


def embed_subsystem_operator(H_sub, slot: int, dims: Sequence[int]) -> HermitianOperator:
    """``I x ... x H_sub x ... x I`` with ``H_sub`` in factor ``slot``."""
    H_sub = as_operator(H_sub)
    if not 0 <= slot < len(dims):
        raise DimensionError(f"slot {slot} out of range for {len(dims)} factors")
    if H_sub.dim != dims[slot]:
        raise DimensionError(f"operator dimension {H_sub.dim} != dims[{slot}] = {dims[slot]}")
    left = int(np.prod(dims[:slot], dtype=int))
    right = int(np.prod(dims[slot + 1:], dtype=int))
    M = np.kron(np.kron(np.eye(left), H_sub.entries), np.eye(right))
    return HermitianOperator(M)
