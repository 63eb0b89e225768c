"""Euler-Maruyama integration of the energy-driven collapse SDE in chart coordinates.

In chart coordinates the dynamics reads

    dx^a = [2 Omega^ab grad_b(H) - sigma^2/4 grad^a V] dt + sigma grad^a(H) dW

with ``V = (H^2) - (H)^2``. The drift is a geometric vector field, so the
coordinate Ito SDE also carries the connection term
``-1/2 Gamma^a_bc b^b b^c`` (``b`` the diffusion vector). Without it the
generator of a scalar would use partial rather than covariant second
derivatives, and projector expectations stop being martingales away from the
chart origin. ``SdeConfig.ito_correction=False`` drops the term for
comparison.

Two routes compute the same update:

* point functions (:func:`drift_vector`, :func:`step`, ...) on real 2n-vectors
  with explicit metric matrices;
* :func:`integrate_batch`, which works on many trajectories at once in the
  complex packing ``t_j = x_{2j-1} + i x_{2j}`` (compiled in ``_kernel``). There the inverse metric acts
  as ``w -> N/4 (w + t (t^dag w))``, the complex structure as multiplication
  by ``-i``, and the connection term becomes ``(t^dag b) b / N`` with
  ``N = 1 + |t|^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Callable, Sequence

import numpy as np

from . import _kernel
from .errors import ChartError, DimensionError, NumericalBlowup
from .identity_oracle import hessian_contraction
from .noise import BLOCK, BatchNoise, trajectory_key, wiener_increments
from .operator_algebra import (
    EigenDecomposition,
    HermitianOperator,
    StateVector,
    as_operator,
    as_state,
    eigendecompose,
    expectation,
    variance,
)
from .projective_geometry import (
    ProjectivePoint,
    best_pivot,
    chart_decode,
    chart_encode,
    expectation_gradient,
    fubini_study_metric,
    pack,
    unpack,
    variance_gradient,
)

UNRESOLVED = _kernel.UNRESOLVED
BLOWUP = _kernel.BLOWUP


@dataclass(frozen=True)
class SdeConfig:
    sigma: float = 1.0
    dt: float = 1e-4
    t_final: float = 50.0
    chart_switch_threshold: float = 4.0
    collapse_V_tol: float = 1e-6
    collapse_dominance: float = 0.99
    seed: int = 0
    record_every: int = 10
    stop_on_collapse: bool = True
    ito_correction: bool = True

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if not self.dt > 0 or not self.t_final > 0:
            raise ValueError("dt and t_final must be positive")
        if not self.dt < self.t_final:
            raise ValueError(f"dt ({self.dt}) must be smaller than t_final ({self.t_final})")
        if not self.chart_switch_threshold >= 2:
            raise ValueError("chart_switch_threshold must be >= 2")
        if not self.collapse_V_tol > 0:
            raise ValueError("collapse_V_tol must be positive")
        if not 0.5 < self.collapse_dominance < 1:
            raise ValueError("collapse_dominance must lie in (0.5, 1)")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    def replace(self, **kw) -> "SdeConfig":
        d = asdict(self)
        d.update(kw)
        return SdeConfig(**d)


# -- point-level vector fields (real chart form) -------------------------------


def drift_vector(H, p: ProjectivePoint, sigma: float) -> np.ndarray:
    """``2 Omega^ab grad_b(H) - sigma^2/4 grad^a V``."""
    m = fubini_study_metric(p)
    gH = expectation_gradient(H, p)
    return 2.0 * m.omega_upper @ gH - 0.25 * sigma**2 * (m.g_inv @ variance_gradient(H, p))


def diffusion_vector(H, p: ProjectivePoint, sigma: float) -> np.ndarray:
    m = fubini_study_metric(p)
    return sigma * (m.g_inv @ expectation_gradient(H, p))


def connection_correction(H, p: ProjectivePoint, sigma: float) -> np.ndarray:
    """``-1/2 Gamma^a_bc b^b b^c`` for the diffusion vector ``b``.

    The Fubini-Study connection in the affine chart has only the holomorphic
    components ``Gamma^k_ij = -(conj(t_i) delta_kj + conj(t_j) delta_ki) / N``.
    """
    b = unpack(diffusion_vector(H, p, sigma))
    t = p.t
    N = 1.0 + float(np.vdot(t, t).real)
    return pack(np.vdot(t, b) * b / N)


def _repivot(p: ProjectivePoint, threshold: float) -> ProjectivePoint:
    t = p.t
    if 1.0 + float(np.vdot(t, t).real) <= threshold:
        return p
    z = p.homogeneous()
    k = best_pivot(z)
    if k == p.pivot:
        return p
    try:
        return chart_encode(z, k)
    except ChartError as exc:  # max-modulus pivot of a nonzero state
        raise AssertionError("re-pivot onto the largest amplitude failed") from exc


def step(p: ProjectivePoint, H, cfg: SdeConfig, dW: float) -> ProjectivePoint:
    """One Euler-Maruyama step in the current chart, then re-pivot if needed."""
    H = as_operator(H)
    a = drift_vector(H, p, cfg.sigma)
    if cfg.ito_correction:
        a = a + connection_correction(H, p, cfg.sigma)
    x = p.x + a * cfg.dt + diffusion_vector(H, p, cfg.sigma) * dW
    return _repivot(ProjectivePoint(x, p.pivot), cfg.chart_switch_threshold)


def scalar_drift(G, H, p: ProjectivePoint, sigma: float) -> float:
    """Ito drift of the scalar ``(G)`` along the SDE.

    ``2 Omega^ab grad_a(G) grad_b(H) - sigma^2/4 grad^a V grad_a(G)
    + sigma^2/2 grad^a(H) grad^b(H) Hess_ab(G)``.
    """
    H = as_operator(H)
    m = fubini_study_metric(p)
    gG = expectation_gradient(G, p)
    gH = expectation_gradient(H, p)
    gV = variance_gradient(H, p)
    return float(2.0 * gG @ m.omega_upper @ gH
                 - 0.25 * sigma**2 * (m.g_inv @ gV) @ gG
                 + 0.5 * sigma**2 * hessian_contraction(H, G, p))


def variance_drift(H, p: ProjectivePoint, sigma: float) -> float:
    """Ito drift of ``V = (H^2) - (H)^2``.

    ``mu[(H^2)] - 2 (H) mu[(H)] - sigma^2 (grad_a(H) grad^a(H))^2``; the last
    term is the quadratic variation of ``(H)``.
    """
    H = as_operator(H)
    m = fubini_study_metric(p)
    gH = expectation_gradient(H, p)
    mean = expectation(H, p.homogeneous())
    qv = float(gH @ m.g_inv @ gH)
    return (scalar_drift(H.squared(), H, p, sigma) - 2.0 * mean * scalar_drift(H, H, p, sigma)
            - sigma**2 * qv * qv)


# -- batched integration ---------------------------------------------------------


class Recorder:
    """Hooks called by :func:`integrate_batch`.

    ``rows`` index the batch. ``record`` fires at ``k = 0``, every
    ``record_every`` steps and at ``n_steps`` for rows still running at that
    step; ``finish`` fires exactly once per row, with the observables of the
    state it stopped in.
    """

    def record(self, k, t, rows, energy, variance, probs, states, pivots):
        pass

    def finish(self, rows, steps, outcomes, energy, variance, probs):
        pass


@dataclass
class BatchResult:
    outcome: np.ndarray
    outcome_step: np.ndarray
    final_states: np.ndarray
    final_pivots: np.ndarray
    failures: dict = field(default_factory=dict)


def prepare_initial(z0s: Sequence, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Homogeneous representatives with amplitude 1 at the best pivot."""
    Z = np.array([as_state(z).amplitudes for z in z0s], dtype=complex).reshape(len(z0s), d)
    piv = np.argmax(np.abs(Z), axis=1)
    rows = np.arange(len(Z))
    Z = Z / Z[rows, piv][:, None]
    Z[rows, piv] = 1.0
    return Z, piv


def record_steps(cfg: SdeConfig) -> np.ndarray:
    ks = np.arange(0, cfg.n_steps + 1, cfg.record_every)
    if ks[-1] != cfg.n_steps:
        ks = np.append(ks, cfg.n_steps)
    return ks


NoiseSource = Callable[[int, int, np.ndarray], np.ndarray]


def integrate_batch(z0s: Sequence, H, cfg: SdeConfig, noise: NoiseSource, *,
                    eig: EigenDecomposition | None = None,
                    recorder: Recorder | None = None) -> BatchResult:
    """Integrate several independent trajectories.

    ``noise(k0, L, rows)`` returns increments ``dW`` (variance ``dt``) of
    shape ``(len(rows), L)`` for steps ``k0 .. k0+L-1``; ``k0`` is always a
    multiple of :data:`noise.BLOCK`.
    """
    H = as_operator(H)
    d = H.dim
    if eig is None:
        eig = eigendecompose(H)
    Hm = np.ascontiguousarray(H.entries)
    Ud = np.ascontiguousarray(eig.matrix.conj().T)
    n_groups = len(eig.degeneracy_groups)
    group_of = np.empty(d, dtype=np.int64)
    for g, members in enumerate(eig.degeneracy_groups):
        group_of[list(members)] = g

    B = len(z0s)
    Z, piv = prepare_initial(z0s, d)
    piv = piv.astype(np.int64)
    status = np.full(B, _kernel.ACTIVE, dtype=np.int64)
    end_step = np.full(B, -1, dtype=np.int64)
    fin_E = np.zeros(B)
    fin_V = np.zeros(B)
    fin_P = np.zeros((B, n_groups))
    n_steps = cfg.n_steps
    rec_ks = record_steps(cfg)
    failures: dict[int, NumericalBlowup] = {}

    k0 = 0
    while k0 <= n_steps:
        active = np.flatnonzero(status == _kernel.ACTIVE)
        if active.size == 0:
            break
        L = min(BLOCK, n_steps + 1 - k0)
        dW = np.zeros((B, L))
        n_adv = min(L, n_steps - k0)
        if n_adv > 0:
            dW[active, :n_adv] = noise(k0, L, active)[:, :n_adv]
        in_block = rec_ks[(rec_ks >= k0) & (rec_ks < k0 + L)]
        rec_slot = np.full(L, -1, dtype=np.int64)
        rec_slot[in_block - k0] = np.arange(in_block.size)
        R = in_block.size
        rec_E = np.full((B, R), np.nan)
        rec_V = np.full((B, R), np.nan)
        rec_P = np.full((B, R, n_groups), np.nan)
        rec_Z = np.zeros((B, R, d), dtype=complex)
        rec_piv = np.full((B, R), -1, dtype=np.int64)
        before = status.copy()
        Z_prev = Z.copy() if n_adv > 0 else Z
        _kernel.advance_block(
            Z, piv, status, end_step, Hm, Ud, group_of, n_groups,
            float(cfg.sigma), float(cfg.dt), dW, k0, n_steps, rec_slot,
            float(cfg.chart_switch_threshold), float(cfg.collapse_V_tol),
            float(cfg.collapse_dominance), bool(cfg.stop_on_collapse), bool(cfg.ito_correction),
            rec_E, rec_V, rec_P, rec_Z, rec_piv, fin_E, fin_V, fin_P)
        if recorder is not None:
            for j, k in enumerate(in_block):
                rows = np.flatnonzero(rec_piv[:, j] >= 0)
                if rows.size:
                    recorder.record(int(k), k * cfg.dt, rows, rec_E[rows, j], rec_V[rows, j],
                                    rec_P[rows, j], rec_Z[rows, j], rec_piv[rows, j])
        ended = np.flatnonzero((before == _kernel.ACTIVE) & (status != _kernel.ACTIVE))
        for r in ended[status[ended] == BLOWUP]:
            failures[int(r)] = NumericalBlowup(
                f"trajectory {r}: non-finite chart coordinate at step {end_step[r]}",
                step=int(end_step[r]), last_state=StateVector(Z[r]), trajectory=int(r))
        if recorder is not None and ended.size:
            recorder.finish(ended, end_step[ended], status[ended], fin_E[ended],
                            fin_V[ended], fin_P[ended])
        k0 += L
    return BatchResult(outcome=status.copy(), outcome_step=end_step.copy(),
                       final_states=Z, final_pivots=piv, failures=failures)


def stream_noise(seed: int, keys, dt: float, refine: int = 1) -> NoiseSource:
    """Increments from independent streams, one per row key.

    ``refine`` as in :func:`noise.wiener_increments`: the path is drawn at
    ``dt / refine`` and summed, pairing runs across step sizes.
    """
    src = BatchNoise(seed, keys)
    sq = math.sqrt(dt / refine)

    def draw(k0, L, rows):
        fine = np.concatenate([src.block(k0 * refine + j * BLOCK, rows) for j in range(refine)], axis=1)
        return (sq * fine[:, :L * refine]).reshape(len(rows), L, refine).sum(axis=2)

    return draw


def array_noise(dW: np.ndarray) -> NoiseSource:
    """Replay explicit increments; ``dW`` is ``(n_steps,)`` shared by all rows,
    or ``(n_rows, n_steps)``."""
    dW = np.asarray(dW, dtype=float)

    def draw(k0, L, rows):
        if dW.ndim == 1:
            seg = dW[k0:k0 + L]
            out = np.zeros((len(rows), L))
            out[:, :seg.size] = seg
            return out
        seg = dW[rows, k0:k0 + L]
        out = np.zeros((len(rows), L))
        out[:, :seg.shape[1]] = seg
        return out

    return draw


# -- single trajectory ---------------------------------------------------------


@dataclass
class TrajectoryRecord:
    """Observables of one trajectory on its recording grid.

    ``projector_expect`` has one column per degeneracy group of ``H``;
    ``states`` are unit-normalized. ``outcome`` is a group index or
    ``"unresolved"``. Recording stops at the step where the trajectory was
    classified; that step is always the last row.
    """

    times: np.ndarray
    states: np.ndarray
    energy_expect: np.ndarray
    variance: np.ndarray
    projector_expect: np.ndarray
    pivots: np.ndarray
    wiener_increments: np.ndarray
    outcome: int | str
    outcome_time: float | None = None

    def csv_header(self) -> list[str]:
        return ["t", "V", "H"] + [f"Pi_{g}" for g in range(self.projector_expect.shape[1])] + ["pivot"]

    def csv_rows(self) -> list[list]:
        return [[float(t), float(v), float(h), *map(float, pi), int(pv)]
                for t, v, h, pi, pv in zip(self.times, self.variance, self.energy_expect,
                                           self.projector_expect, self.pivots)]


class _SingleRecorder(Recorder):
    def __init__(self):
        self.snaps: list[tuple] = []
        self.end_step = None

    def record(self, k, t, rows, energy, variance, probs, states, pivots):
        self.snaps.append((k, t, states[0], energy[0], variance[0], probs[0], pivots[0]))

    def finish(self, rows, steps, outcomes, energy, variance, probs):
        self.end_step = int(steps[0])


def evolve(z0, H, cfg: SdeConfig, index: int = 0, *, dW: np.ndarray | None = None,
           eig: EigenDecomposition | None = None) -> TrajectoryRecord:
    """Integrate one trajectory.

    Increments come from stream ``(cfg.seed, index)`` unless ``dW`` is given.
    Raises :class:`NumericalBlowup` on a non-finite coordinate.
    """
    H = as_operator(H)
    z0 = as_state(z0)
    if z0.dim != H.dim:
        raise DimensionError(f"state dimension {z0.dim} != operator dimension {H.dim}")
    if eig is None:
        eig = eigendecompose(H)
    n_steps = cfg.n_steps
    if dW is None:
        dW = wiener_increments(cfg.seed, trajectory_key(index), n_steps, cfg.dt)
    dW = np.asarray(dW, dtype=float)
    if dW.size < n_steps:
        raise ValueError(f"need {n_steps} increments, got {dW.size}")
    dW = dW[:n_steps]
    rec = _SingleRecorder()
    res = integrate_batch([z0], H, cfg, array_noise(dW), eig=eig, recorder=rec)
    if 0 in res.failures:
        raise res.failures[0]
    end = rec.end_step
    snaps = [s for s in rec.snaps if s[0] <= end]
    if not snaps or snaps[-1][0] != end:
        # classification happened between recording steps: add the final state
        z = res.final_states[0] / np.linalg.norm(res.final_states[0])
        snaps.append((end, end * cfg.dt, z, expectation(H, z), variance(H, z),
                      np.array([expectation(P, z) for P in eig.group_projectors()]),
                      int(res.final_pivots[0])))
    code = int(res.outcome[0])
    return TrajectoryRecord(
        times=np.array([s[1] for s in snaps]),
        states=np.array([s[2] for s in snaps]),
        energy_expect=np.array([s[3] for s in snaps]),
        variance=np.array([s[4] for s in snaps]),
        projector_expect=np.array([s[5] for s in snaps]),
        pivots=np.array([s[6] for s in snaps], dtype=int),
        wiener_increments=dW[:end],
        outcome=code if code >= 0 else "unresolved",
        outcome_time=end * cfg.dt if code >= 0 else None,
    )
