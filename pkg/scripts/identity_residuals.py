"""Residual distribution of every geometric identity over random draws."""

import argparse

from collapse_sde.identity_oracle import run_identity_suite


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--draws", type=int, default=200)
    ap.add_argument("--dims", type=int, nargs="+", default=[1, 2, 3])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = run_identity_suite(n_draws=args.draws, dims=tuple(args.dims), seed=args.seed)
    print(f"{'identity':<18} {'n':>2} {'max':>10} {'median':>10} {'p99':>10}")
    for name, per in out["summary"].items():
        for n, s in per.items():
            print(f"{name:<18} {n:>2} {s.max:10.2e} {s.median:10.2e} {s.p99:10.2e}")


if __name__ == "__main__":
    main()
