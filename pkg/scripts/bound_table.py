"""Print the false-discovery bound next to the over-discovery rate observed in simulation."""

import argparse
import sys

from mdcr.experiment import SweepSpec, aggregate, run_sweep, false_discovery_bound_table


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, nargs="+", default=[1000, 2500, 5000, 10000])
    ap.add_argument("--kappa", type=float, default=0.2)
    ap.add_argument("--alpha", type=float, default=0.05)
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--simulate", action="store_true", help="also run the duplicate-distribution preset")
    args = ap.parse_args(argv)

    bounds = {(r["n"], r["num_wrong"]): r["bound"]
              for r in false_discovery_bound_table(args.n, [args.kappa], args.alpha, [2, 3])}
    observed = {}
    if args.simulate:
        spec = SweepSpec.from_dict({"preset": "violated_duplicate", "grid": {"m": [2, 3], "n": args.n},
                                    "trials": args.trials})
        observed = {(r["n"], r["m"]): r["over_discovery_rate"] for r in aggregate(run_sweep(spec), spec)}

    print(f"{'n':>6} {'bound m=2':>12} {'bound m=3':>12} {'obs m=2':>8} {'obs m=3':>8}")
    for n in args.n:
        obs = [observed.get((n, m)) for m in (2, 3)]
        obs_txt = " ".join(f"{o:>8.2f}" if o is not None else f"{'-':>8}" for o in obs)
        print(f"{n:>6} {bounds[n, 2]:>12.3e} {bounds[n, 3]:>12.3e} {obs_txt}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
