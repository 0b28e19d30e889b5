"""Spread of the selected features across repetitions for several sample sizes.

Shows how stable the nine regression inputs are at 50d, 100d and 400d
uniform samples, on one instance of each function.

    python scripts/sample_size_sensitivity.py --reps 10
"""

import argparse

import numpy as np

from fbselect import bench, ela


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--dim", type=int, default=5)
    ap.add_argument("--reps", type=int, default=10)
    ap.add_argument("--factors", type=int, nargs="*", default=[50, 100, 400])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    cols = [ela.FEATURE_NAMES.index(n) for n in ela.SELECTED_FEATURES]
    print("mean (over functions) of the per-feature IQR across repetitions")
    print(f"{'feature':34s}" + "".join(f"{f'{k}d':>10s}" for k in args.factors))
    spread = np.zeros((len(cols), len(args.factors)))
    for j, k in enumerate(args.factors):
        for fid in bench.FUNCTION_IDS:
            vec = ela.compute_features(bench.make_problem(fid, 1, args.dim), k * args.dim, args.reps, args.seed)
            q75, q25 = np.percentile(vec.replicates[:, cols], [75, 25], axis=0)
            spread[:, j] += (q75 - q25) / len(bench.FUNCTION_IDS)
    for name, row in zip(ela.SELECTED_FEATURES, spread):
        print(f"{name:34s}" + "".join(f"{v:10.3g}" for v in row))


if __name__ == "__main__":
    main()
