"""Run the desk-scale pipeline end to end and print per-stage wall times.

    python scripts/desk_scale.py --out runs/desk --jobs 4
"""

import argparse
import json
import os
import sys
import time

from fbselect import cli

HERE = os.path.dirname(os.path.abspath(__file__))
STAGES = ("run-portfolio", "extract-features", "train-eval", "tune-threshold", "report-figures")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--config", default=os.path.join(HERE, "..", "configs", "desk_scale.yaml"))
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--seed", type=int)
    args = ap.parse_args(argv)

    common = ["--config", args.config, "--out", args.out, "--jobs", str(args.jobs)]
    if args.seed is not None:
        common += ["--seed", str(args.seed)]
    total = time.perf_counter()
    for stage in STAGES:
        t0 = time.perf_counter()
        rc = cli.main([stage, *common])
        print(f"{stage:18s} {time.perf_counter() - t0:8.1f} s  rc={rc}")
        if rc:
            return rc
    print(f"{'total':18s} {time.perf_counter() - total:8.1f} s")

    with open(os.path.join(args.out, cli.REPORT), encoding="utf-8") as fh:
        report = json.load(fh)
    print("\nselector            rmse        log_rmse")
    for name, entry in [("vbs", report["baselines"]["vbs"]), *report["selectors"].items()]:
        print(f"{name:18s} {entry['rmse']:10.4g}  {entry['log_rmse']:10.4g}")
    models = report["models"]
    unscaled_better = sum(m["rmse"] < m["rmse_of_log_model"] for m in models.values())
    log_better = sum(m["log_rmse"] < m["log_rmse_of_unscaled_model"] for m in models.values())
    print(f"\nunscaled model has lower RMSE for {unscaled_better}/{len(models)} configs")
    print(f"log model has lower log-RMSE for {log_better}/{len(models)} configs")
    return 0


if __name__ == "__main__":
    sys.exit(main())
