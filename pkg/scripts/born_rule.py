"""Collapse statistics for the two-level and three-level test systems.

Prints outcome frequencies against Born weights together with the
martingale, energy and variance-decay reports.
"""

import argparse
import time

import numpy as np

from collapse_sde.ensemble import (
    born_gate,
    energy_conservation_report,
    martingale_report,
    run_ensemble,
    variance_decay_report,
)
from collapse_sde.sde_engine import SdeConfig

SYSTEMS = {
    "two_level": (np.diag([0.0, 1.0]), np.ones(2) / np.sqrt(2), SdeConfig(dt=1e-3, t_final=80.0, record_every=100)),
    "three_level": (np.diag([0.0, 0.5, 1.0]), np.array([1.0, 1.0, np.sqrt(2.0)]) / 2,
                    SdeConfig(dt=2e-3, t_final=500.0, record_every=250)),
}


def report(name, n_traj, seed, threads):
    H, z0, cfg = SYSTEMS[name]
    cfg = cfg.replace(seed=seed)
    t0 = time.perf_counter()
    stats = run_ensemble(z0, H, cfg, n_traj, threads=threads)
    wall = time.perf_counter() - t0
    collapse_t = stats.end_steps[stats.outcomes >= 0] * cfg.dt
    print(f"== {name}: {n_traj} trajectories, dt={cfg.dt}, t_final={cfg.t_final} ({wall:.1f} s)")
    print(f"  born probs      {np.round(stats.born_probs, 4)}")
    print(f"  frequencies     {np.round(stats.outcome_freqs, 4)}  (|dev|/SE {np.round(born_gate(stats), 2)})")
    print(f"  unresolved      {stats.unresolved_count}  chi2={stats.chi2:.3f} dof={stats.chi2_dof} "
          f"p={stats.chi2_pvalue:.3f}")
    if collapse_t.size:
        print(f"  collapse time   median {np.median(collapse_t):.1f}, 99% {np.quantile(collapse_t, 0.99):.1f}")
    print(f"  martingale      max {martingale_report(stats).max_normalized:.2f} SE")
    print(f"  energy          max {energy_conservation_report(stats).max_normalized:.2f} SE")
    v = variance_decay_report(stats)
    print(f"  variance decay  monotone={v.monotone} inequality={v.inequality} "
          f"min margin {v.margins[1:].min():.3e}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-traj", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=0)
    ap.add_argument("--system", choices=sorted(SYSTEMS), nargs="+", default=sorted(SYSTEMS))
    args = ap.parse_args()
    for name in args.system:
        report(name, args.n_traj, args.seed, args.threads)


if __name__ == "__main__":
    main()
