"""Trajectory ensembles and their statistical verdicts.

Standard errors are ``std(ddof=1) / sqrt(n_traj)`` across trajectories at a
fixed recording time. A trajectory that stopped early (collapsed, or timed out
at ``t_final``) keeps contributing the observables of its final state to every
later recording time, i.e. collapsed states are treated as absorbing.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats as sstats

from .errors import NumericalBlowup
from .noise import trajectory_key
from .operator_algebra import EigenDecomposition, as_operator, as_state, eigendecompose, expectation, variance
from .sde_engine import (
    BLOWUP,
    UNRESOLVED,
    Recorder,
    SdeConfig,
    integrate_batch,
    record_steps,
    stream_noise,
)

DEFAULT_BATCH = 2048
SE_FLOOR = 1e-12


class EnsembleAborted(NumericalBlowup):
    pass


def born_probabilities(z0, eig: EigenDecomposition) -> np.ndarray:
    """Initial weight of each degeneracy group, ``sum_e |<e|z0>|^2 / <z0|z0>``."""
    z = as_state(z0).amplitudes
    w = np.abs(eig.matrix.conj().T @ z) ** 2 / np.vdot(z, z).real
    return np.array([w[list(g)].sum() for g in eig.degeneracy_groups])


@dataclass
class EnsembleStats:
    """Aggregated ensemble results.

    Series are indexed by the recording grid ``times``; ``*_mean`` and
    ``*_se`` are the across-trajectory mean and its standard error. Outcome
    counts are integers with ``sum(outcome_counts) + unresolved_count ==
    n_traj``; blown-up trajectories are a subset of the unresolved ones.
    """

    n_traj: int
    sigma: float
    dt: float
    t_final: float
    group_values: np.ndarray
    born_probs: np.ndarray
    outcome_counts: np.ndarray
    unresolved_count: int
    blowup_count: int
    times: np.ndarray
    EV_mean: np.ndarray
    EV_se: np.ndarray
    EH_mean: np.ndarray
    EH_se: np.ndarray
    EPi_mean: np.ndarray
    EPi_se: np.ndarray
    chi2: float
    chi2_dof: int
    chi2_pvalue: float
    initial_energy: float
    initial_variance: float
    outcomes: np.ndarray = field(default=None, repr=False)
    end_steps: np.ndarray = field(default=None, repr=False)
    terminal_probs: np.ndarray = field(default=None, repr=False)
    failed_trajectories: list = field(default_factory=list)

    @property
    def outcome_freqs(self) -> np.ndarray:
        return self.outcome_counts / self.n_traj

    @property
    def unresolved_fraction(self) -> float:
        return self.unresolved_count / self.n_traj

    @property
    def EV_series(self):
        return list(zip(self.times, self.EV_mean, self.EV_se))

    @property
    def EH_series(self):
        return list(zip(self.times, self.EH_mean, self.EH_se))

    def to_json_dict(self) -> dict:
        """JSON-ready summary (per-trajectory arrays are omitted)."""
        f = lambda a: [float(v) for v in np.asarray(a).ravel()]
        return {
            "n_traj": self.n_traj,
            "sigma": self.sigma,
            "dt": self.dt,
            "t_final": self.t_final,
            "group_values": f(self.group_values),
            "born_probs": f(self.born_probs),
            "outcome_counts": [int(c) for c in self.outcome_counts],
            "outcome_freqs": f(self.outcome_freqs),
            "unresolved_count": self.unresolved_count,
            "blowup_count": self.blowup_count,
            "failed_trajectories": list(self.failed_trajectories),
            "chi2": self.chi2,
            "chi2_dof": self.chi2_dof,
            "chi2_pvalue": self.chi2_pvalue,
            "initial_energy": self.initial_energy,
            "initial_variance": self.initial_variance,
            "series": {
                "t": f(self.times),
                "EV_mean": f(self.EV_mean),
                "EV_se": f(self.EV_se),
                "EH_mean": f(self.EH_mean),
                "EH_se": f(self.EH_se),
                "EPi_mean": [f(row) for row in self.EPi_mean],
                "EPi_se": [f(row) for row in self.EPi_se],
            },
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "EnsembleStats":
        s = d["series"]
        return cls(
            n_traj=d["n_traj"], sigma=d["sigma"], dt=d["dt"], t_final=d["t_final"],
            group_values=np.array(d["group_values"]), born_probs=np.array(d["born_probs"]),
            outcome_counts=np.array(d["outcome_counts"], dtype=int),
            unresolved_count=d["unresolved_count"], blowup_count=d["blowup_count"],
            times=np.array(s["t"]), EV_mean=np.array(s["EV_mean"]), EV_se=np.array(s["EV_se"]),
            EH_mean=np.array(s["EH_mean"]), EH_se=np.array(s["EH_se"]),
            EPi_mean=np.array(s["EPi_mean"]), EPi_se=np.array(s["EPi_se"]),
            chi2=d["chi2"], chi2_dof=d["chi2_dof"], chi2_pvalue=d["chi2_pvalue"],
            initial_energy=d["initial_energy"], initial_variance=d["initial_variance"],
            failed_trajectories=list(d.get("failed_trajectories", [])),
        )

    def series_csv_header(self) -> list[str]:
        G = self.EPi_mean.shape[1]
        return (["t", "EV", "EV_se", "EH", "EH_se"]
                + [c for g in range(G) for c in (f"EPi_{g}", f"EPi_{g}_se")])

    def series_csv_rows(self) -> list[list[float]]:
        rows = []
        for i, t in enumerate(self.times):
            row = [t, self.EV_mean[i], self.EV_se[i], self.EH_mean[i], self.EH_se[i]]
            for g in range(self.EPi_mean.shape[1]):
                row += [self.EPi_mean[i, g], self.EPi_se[i, g]]
            rows.append([float(v) for v in row])
        return rows


class _Moments(Recorder):
    """Per-slot sums of E, V, Pi and their squares over one batch."""

    def __init__(self, ks: np.ndarray, n_rows: int, n_groups: int):
        self.ks = ks
        self.slot = {int(k): i for i, k in enumerate(ks)}
        T = len(ks)
        self.n_obs = 2 + n_groups
        self.s1 = np.zeros((T, self.n_obs))
        self.s2 = np.zeros((T, self.n_obs))
        self.carry1 = np.zeros((T + 1, self.n_obs))
        self.carry2 = np.zeros((T + 1, self.n_obs))
        self.end_step = np.full(n_rows, -1, dtype=np.int64)
        self.outcome = np.full(n_rows, UNRESOLVED, dtype=np.int64)
        self.final = np.zeros((n_rows, self.n_obs))

    def record(self, k, t, rows, energy, variance, probs, states, pivots):
        obs = np.column_stack([variance, energy, probs])
        i = self.slot[int(k)]
        with np.errstate(over="ignore"):  # blown-up rows; the ensemble aborts anyway
            self.s1[i] += obs.sum(axis=0)
            self.s2[i] += (obs * obs).sum(axis=0)

    def finish(self, rows, steps, outcomes, energy, variance, probs):
        obs = np.column_stack([variance, energy, probs])
        self.end_step[rows] = steps
        self.outcome[rows] = outcomes
        self.final[rows] = obs
        # the final state counts for every slot strictly after its last step
        first = np.searchsorted(self.ks, steps, side="right")
        with np.errstate(over="ignore"):
            np.add.at(self.carry1, first, obs)
            np.add.at(self.carry2, first, obs * obs)

    def totals(self):
        c1 = np.cumsum(self.carry1, axis=0)[:-1]
        c2 = np.cumsum(self.carry2, axis=0)[:-1]
        return self.s1 + c1, self.s2 + c2


def _run_batch(z0, H, cfg, eig, indices, key_channel, refine=1):
    keys = [trajectory_key(i, key_channel) for i in indices]
    mom = _Moments(record_steps(cfg), len(indices), len(eig.degeneracy_groups))
    res = integrate_batch([z0] * len(indices), H, cfg, stream_noise(cfg.seed, keys, cfg.dt, refine),
                          eig=eig, recorder=mom)
    failures = {int(indices[r]): exc for r, exc in res.failures.items()}
    return mom, failures


def run_ensemble(z0, H, cfg: SdeConfig, n_traj: int, *, threads: int = 0,
                 batch_size: int = DEFAULT_BATCH, eig: EigenDecomposition | None = None,
                 max_blowup_fraction: float = 0.01, refine: int = 1,
                 key_channel: int = 0) -> EnsembleStats:
    """Run trajectories ``0 .. n_traj-1`` and aggregate.

    Trajectories are split into fixed batches of ``batch_size`` and batch
    sums are combined in index order, so ``threads`` changes only wall time,
    never the numbers. ``refine`` draws the Brownian path at ``dt / refine``
    (see :func:`noise.wiener_increments`) to pair runs across step sizes;
    ``key_channel`` selects the noise channel of each trajectory's stream.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    H = as_operator(H)
    z0 = as_state(z0)
    if eig is None:
        eig = eigendecompose(H)
    G = len(eig.degeneracy_groups)
    chunks = [np.arange(a, min(a + batch_size, n_traj)) for a in range(0, n_traj, batch_size)]
    if threads and threads > 0:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(lambda idx: _run_batch(z0, H, cfg, eig, idx, key_channel, refine), chunks))
    else:
        results = [_run_batch(z0, H, cfg, eig, idx, key_channel, refine) for idx in chunks]

    ks = record_steps(cfg)
    S1 = np.zeros((len(ks), 2 + G))
    S2 = np.zeros((len(ks), 2 + G))
    outcomes = np.concatenate([m.outcome for m, _ in results])
    end_steps = np.concatenate([m.end_step for m, _ in results])
    terminal = np.concatenate([m.final[:, 2:] for m, _ in results])
    failures: dict[int, NumericalBlowup] = {}
    for mom, fails in results:
        a, b = mom.totals()
        S1 += a
        S2 += b
        failures.update(fails)
    if len(failures) > max_blowup_fraction * n_traj:
        first = failures[min(failures)]
        raise EnsembleAborted(
            f"{len(failures)} of {n_traj} trajectories blew up (first: {first})",
            step=first.step, last_state=first.last_state, trajectory=first.trajectory)

    mean = S1 / n_traj
    if n_traj > 1:
        var = np.maximum(S2 - n_traj * mean * mean, 0.0) / (n_traj - 1)
    else:
        var = np.zeros_like(mean)
    se = np.sqrt(var / n_traj)

    born = born_probabilities(z0, eig)
    counts = np.bincount(outcomes[outcomes >= 0], minlength=G)[:G]
    unresolved = int(np.count_nonzero(outcomes < 0))
    chi2, dof, pval = chi_square(counts, born)
    return EnsembleStats(
        n_traj=n_traj, sigma=cfg.sigma, dt=cfg.dt, t_final=cfg.t_final,
        group_values=eig.group_values(), born_probs=born, outcome_counts=counts,
        unresolved_count=unresolved, blowup_count=int(np.count_nonzero(outcomes == BLOWUP)),
        times=ks * cfg.dt, EV_mean=mean[:, 0], EV_se=se[:, 0], EH_mean=mean[:, 1],
        EH_se=se[:, 1], EPi_mean=mean[:, 2:], EPi_se=se[:, 2:],
        chi2=chi2, chi2_dof=dof, chi2_pvalue=pval,
        initial_energy=expectation(H, z0), initial_variance=variance(H, z0),
        outcomes=outcomes, end_steps=end_steps, terminal_probs=terminal,
        failed_trajectories=sorted(failures),
    )


def chi_square(counts: Sequence[int], probs: Sequence[float]) -> tuple[float, int, float]:
    """Pearson statistic of resolved counts against Born weights.

    Expected counts use the number of resolved trajectories. Groups with zero
    Born weight are left out; any count in such a group makes the statistic
    infinite.
    """
    counts = np.asarray(counts, dtype=float)
    probs = np.asarray(probs, dtype=float)
    n = counts.sum()
    support = probs > 1e-12
    if n == 0:
        return 0.0, 0, 1.0
    if np.any(counts[~support] > 0):
        return math.inf, int(support.sum()) - 1, 0.0
    dof = int(support.sum()) - 1
    if dof <= 0:
        return 0.0, 0, 1.0
    p = probs[support] / probs[support].sum()
    expected = n * p
    chi2 = float(np.sum((counts[support] - expected) ** 2 / expected))
    return chi2, dof, float(sstats.chi2.sf(chi2, dof))


# -- reports -------------------------------------------------------------------


@dataclass
class DeviationReport:
    """Largest ``|E[X_t] - X_0| / SE_t`` over recording times (and groups)."""

    max_normalized: float
    per_group: list[float]
    at_time: float

    def passes(self, bound: float = 4.0) -> bool:
        return self.max_normalized <= bound


def _normalized(dev: np.ndarray, se: np.ndarray) -> np.ndarray:
    dev = np.abs(dev)
    out = dev / np.maximum(se, SE_FLOOR)
    out[(se < SE_FLOOR) & (dev < SE_FLOOR)] = 0.0
    return out


def martingale_report(stats: EnsembleStats) -> DeviationReport:
    z = _normalized(stats.EPi_mean - stats.born_probs[None, :], stats.EPi_se)
    per_group = z.max(axis=0)
    i = int(np.unravel_index(np.argmax(z), z.shape)[0])
    return DeviationReport(float(z.max()), [float(v) for v in per_group], float(stats.times[i]))


def energy_conservation_report(stats: EnsembleStats) -> DeviationReport:
    z = _normalized(stats.EH_mean - stats.initial_energy, stats.EH_se)
    i = int(np.argmax(z))
    return DeviationReport(float(z[i]), [float(z[i])], float(stats.times[i]))


@dataclass
class VarianceDecayReport:
    monotone: bool
    inequality: bool
    margins: np.ndarray
    bound: np.ndarray
    worst_increase: float

    @property
    def passes(self) -> bool:
        return self.monotone and self.inequality


def variance_decay_report(stats: EnsembleStats, n_se: float = 4.0) -> VarianceDecayReport:
    """Checks ``E[V_t]`` against ``E[V_0] - sigma^2 int_0^t E[V_s]^2 ds``.

    The integral is a trapezoid sum on the recording grid. The allowance
    combines the SE of ``E[V_t]`` with the SE propagated through the
    integral, ``sigma^2 int 2 E[V_s] SE_s ds``. Monotonicity allows each
    recorded increase up to ``n_se`` combined SEs of the two neighbours.
    """
    t, m, se = stats.times, stats.EV_mean, stats.EV_se
    s2 = stats.sigma**2
    integral = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(t) * (m[1:] ** 2 + m[:-1] ** 2))])
    se_int = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(t) * (2 * m[1:] * se[1:] + 2 * m[:-1] * se[:-1]))])
    combined = np.sqrt(se**2 + se[0] ** 2 + (s2 * se_int) ** 2)
    bound = m[0] - s2 * integral
    margins = bound + n_se * combined - m
    inc = np.diff(m) - n_se * np.sqrt(se[1:] ** 2 + se[:-1] ** 2)
    worst = float(inc.max()) if inc.size else -math.inf
    return VarianceDecayReport(
        monotone=bool(worst <= 0.0), inequality=bool(np.all(margins >= 0.0)),
        margins=margins, bound=bound, worst_increase=worst)


def born_gate(stats: EnsembleStats, n_se: float = 3.0) -> np.ndarray:
    """``|P_e - p_e| / sqrt(p_e (1 - p_e) / n)`` per group (0 where ``p_e`` is 0 or 1 and matched)."""
    p = stats.born_probs
    P = stats.outcome_freqs
    se = np.sqrt(p * (1 - p) / stats.n_traj)
    return _normalized(P - p, se)


def stats_to_json(stats: EnsembleStats) -> str:
    return json.dumps(stats.to_json_dict(), indent=2, sort_keys=True)
