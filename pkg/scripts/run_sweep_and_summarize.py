"""Run a sweep config through the CLI and print the per-cell summary table.

Example::

    python scripts/run_sweep_and_summarize.py configs/ell3.json results/ell3 --threads 4
"""

import argparse
import json
import sys
from pathlib import Path

from mdcr.cli import main as mdcr_main


def _num(x):
    return float("nan") if x is None else x


def summary_lines(rows):
    yield f"{'m':>3} {'n':>6} {'trials':>6} {'fail':>5} {'ell_hat':>13} {'exact':>6} {'over':>5} {'score_B med':>12} {'score_A med':>12}"
    for r in rows:
        yield (f"{r['m']:>3} {r['n']:>6} {r['trials']:>6} {r['failures']:>5} "
               f"{_num(r['ell_hat_mean']):>6.2f}±{_num(r['ell_hat_sd']):<6.2f} {_num(r['frac_exact_ell']):>6.2f} "
               f"{_num(r['over_discovery_rate']):>5.2f} {_num(r['score_B']['median']):>12.4f} "
               f"{_num(r['score_A']['median']):>12.4f}")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("out")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--oracle", action="store_true")
    args = ap.parse_args(argv)

    cmd = ["sweep", "--config", args.config, "--out", args.out, "--threads", str(args.threads), "--svg"]
    if args.oracle:
        cmd.append("--oracle")
    code = mdcr_main(cmd)
    if code != 0:
        return code
    rows = json.loads((Path(args.out) / "aggregate.json").read_text())["cells"]
    for line in summary_lines(rows):
        print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())
