"""Print RMSE / log-RMSE of the combined selector over a threshold grid.

    python scripts/threshold_sensitivity.py runs/desk/predictions.csv
"""

import argparse

import numpy as np

from fbselect import selector as sel


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("predictions")
    ap.add_argument("--thresholds", type=float, nargs="*", default=list(sel.REFERENCE_THRESHOLDS))
    args = ap.parse_args(argv)

    pm, perf = sel.read_predictions_csv(args.predictions)
    p_star = sel.best_predicted_precision(pm)
    print(f"best predicted precision per instance: min {p_star.min():.3g}, max {p_star.max():.3g}")
    print(f"{'threshold':>10} {'rmse':>10} {'log_rmse':>10} {'log-share':>10}")
    for t, r, l in sel.threshold_table(pm, perf, args.thresholds):
        share = np.mean(p_star < t)
        print(f"{t:10.4g} {r:10.4g} {l:10.4g} {share:10.2f}")
    for metric in sel.METRICS:
        t, v = sel.tune_threshold(pm, perf, None, metric)
        print(f"tuned on {metric}: threshold {t:.4g} -> {v:.4g}")


if __name__ == "__main__":
    main()
