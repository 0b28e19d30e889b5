"""Build a portfolio from randomly drawn variants, then run the selection pipeline on it.

Runs ``n_candidates`` random variants on the suite, keeps the per-function
winners and trains/evaluates selectors on that portfolio.

    python scripts/portfolio_from_candidates.py --out runs/auto --candidates 48 --jobs 4
"""

import argparse
import os
import sys

from fbselect import cli

HERE = os.path.dirname(os.path.abspath(__file__))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--config", default=os.path.join(HERE, "..", "configs", "desk_scale.yaml"))
    ap.add_argument("--out", default="runs/auto")
    ap.add_argument("--candidates", type=int, default=48)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args(argv)

    common = [
        "--config", args.config, "--out", args.out, "--jobs", str(args.jobs),
        "--set", "portfolio.file=auto-select", "--set", f"portfolio.n_candidates={args.candidates}",
    ]
    for stage in ("run-portfolio", "select-portfolio", "extract-features", "train-eval", "report-figures"):
        rc = cli.main([stage, *common])
        if rc:
            return rc
    with open(os.path.join(args.out, cli.PORTFOLIO_SELECTED), encoding="utf-8") as fh:
        print(fh.read())
    return 0


if __name__ == "__main__":
    sys.exit(main())
