"""Command-line pipeline: portfolio runs, features, cross-validated selection, reports.

Every subcommand reads the same config file and works inside one output
directory, so the stages chain::

    fbselect run-portfolio    --config c.yaml --out runs/
    fbselect select-portfolio --config c.yaml --out runs/   # auto-select only
    fbselect extract-features --config c.yaml --out runs/
    fbselect train-eval       --config c.yaml --out runs/
    fbselect tune-threshold   --config c.yaml --out runs/
    fbselect report-figures   --config c.yaml --out runs/
"""

import argparse
import csv
import json
import logging
import os
import sys
from collections import Counter, OrderedDict

import numpy as np
import yaml

from . import config as cfgmod
from . import ela, modcma
from .bench import ProblemId, ingest_performance, make_problem, write_median_csv, write_performance_csv
from .errors import ValidationError
from .parallel import map_tasks
from .seeding import derive_seed
from .selector import (
    PerformanceMatrix,
    evaluate,
    read_predictions_csv,
    run_cv,
    threshold_table,
    tune_threshold,
    write_predictions_csv,
)

log = logging.getLogger("fbselect")

PERF_RUNS = "performance_runs.csv"
PERF_MEDIAN = "performance_median.csv"
PORTFOLIO_SELECTED = "portfolio_selected.txt"
FEATURES = "features.csv"
FEATURES_NORMALIZED = "features_normalized.csv"
PREDICTIONS = "predictions.csv"
REPORT = "report.json"
THRESHOLD = "threshold.json"
FIGURES = {
    1: "fig1_performance.csv",
    2: "fig2_winners.csv",
    3: "fig3_features.csv",
    4: "fig4_predictions.csv",
    5: "fig5_quality.csv",
}


# --------------------------------------------------------------------------
# helpers


def _meta(cfg):
    return OrderedDict([("config_hash", cfg.hash()), ("master_seed", cfg.seed)])


def _problems(cfg):
    s = cfg.suite
    return [ProblemId(int(f), int(i), int(s.dim)) for f in s.functions for i in s.instances]


def _prepare_out(out):
    os.makedirs(out, exist_ok=True)
    probe = os.path.join(out, ".write-test")
    with open(probe, "w", encoding="utf-8") as fh:
        fh.write("")
    os.remove(probe)


def _require(out, name, produced_by):
    path = os.path.join(out, name)
    if not os.path.isfile(path):
        raise ValidationError(f"{name} not found in {out}; run `{produced_by}` first")
    return path


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")


def _write_csv(path, meta, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for k, v in meta.items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _selected_algos(cfg, out):
    """Portfolio used for training: config codes, or the auto-selected file."""
    codes = cfg.portfolio_codes()
    if codes is not None:
        return codes
    path = _require(out, PORTFOLIO_SELECTED, "select-portfolio")
    return [c.code for c in modcma.read_portfolio(path)]


def _load_performance(cfg, out):
    records = ingest_performance(_require(out, PERF_RUNS, "run-portfolio"))
    algos = _selected_algos(cfg, out)
    present = {r.algo_id for r in records}
    missing = [a for a in algos if a not in present]
    if missing:
        raise ValidationError(f"performance file has no rows for {missing}")
    return PerformanceMatrix.from_records([r for r in records if r.algo_id in set(algos)], algos)


# --------------------------------------------------------------------------
# subcommands


def cmd_run_portfolio(cfg, out, jobs=1):
    codes = cfg.candidate_codes()
    records = modcma.run_portfolio(
        _problems(cfg), codes, cfg.portfolio.budget, cfg.portfolio.runs, cfg.seed, jobs=jobs
    )
    meta = _meta(cfg)
    write_performance_csv(os.path.join(out, PERF_RUNS), records, meta)
    write_median_csv(os.path.join(out, PERF_MEDIAN), records, meta)
    return records


def cmd_select_portfolio(cfg, out, jobs=1):
    records = ingest_performance(_require(out, PERF_RUNS, "run-portfolio"))
    winners = modcma.select_portfolio(records, cfg.portfolio.k)
    meta = _meta(cfg)
    modcma.write_portfolio(
        os.path.join(out, PORTFOLIO_SELECTED), winners, [f"{k}={v}" for k, v in meta.items()]
    )
    return winners


def _features_task(task):
    pid, n, reps, seed = task
    vec = ela.compute_features(make_problem(pid.fid, pid.iid, pid.dim), n, reps, seed)
    return list(vec.values.values())


def cmd_extract_features(cfg, out, jobs=1, report_normalized=False):
    problems = _problems(cfg)
    f = cfg.features
    tasks = [(pid, f.n_samples, f.reps, ela_seed(cfg.seed, pid)) for pid in problems]
    rows = map_tasks(_features_task, tasks, jobs)
    full = ela.FeatureTable(problems, list(ela.FEATURE_NAMES), np.array(rows), f.n_samples, f.reps)
    table = full.subset(cfg.feature_names())
    meta = _meta(cfg)
    ela.write_features_csv(os.path.join(out, FEATURES), table, meta)
    if report_normalized:
        norm = ela.FeatureTable(problems, table.names, ela.minmax_normalize(table.matrix), f.n_samples, f.reps)
        ela.write_features_csv(os.path.join(out, FEATURES_NORMALIZED), norm, meta)
    return table


def ela_seed(master, pid):
    return derive_seed(master, "features", pid.fid, pid.iid, pid.dim)


def cmd_train_eval(cfg, out, jobs=1):
    perf = _load_performance(cfg, out)
    features = ela.read_features_csv(_require(out, FEATURES, "extract-features"))
    preds = run_cv(features, perf, cfg.cv, cfg.forest, cfg.seed, jobs)
    grid = cfg.threshold_grid()
    report = evaluate(preds, perf, grid, table_thresholds=grid)
    report.config = cfg.to_dict()
    meta = _meta(cfg)
    write_predictions_csv(os.path.join(out, PREDICTIONS), preds, meta)
    body = OrderedDict(meta)
    body.update(report.to_dict())
    body["portfolio"] = list(perf.algos)
    _write_json(os.path.join(out, REPORT), body)
    return body


def cmd_tune_threshold(cfg, out, jobs=1):
    preds, perf = read_predictions_csv(_require(out, PREDICTIONS, "train-eval"), cfg.suite.dim)
    grid = cfg.threshold_grid()
    result = OrderedDict(_meta(cfg))
    result["metric"] = cfg.selection.metric
    for metric in ("rmse", "log_rmse"):
        t, v = tune_threshold(preds, perf, grid, metric)
        result[metric] = {"threshold": t, "value": v}
    result["threshold"] = result[cfg.selection.metric]["threshold"]
    result["table"] = [{"threshold": t, "rmse": r, "log_rmse": l} for t, r, l in threshold_table(preds, perf, grid)]
    _write_json(os.path.join(out, THRESHOLD), result)
    return result


_REPORT_SECTIONS = ("selectors", "baselines", "models", "threshold_table", "portfolio")


def cmd_report_figures(cfg, out, jobs=1):
    with open(_require(out, REPORT, "train-eval"), encoding="utf-8") as fh:
        report = json.load(fh)
    missing = [s for s in _REPORT_SECTIONS if s not in report]
    if missing:
        raise ValidationError(f"report is missing sections {missing}")
    meta = _meta(cfg)
    algos = report["portfolio"]
    perf = _load_performance(cfg, out)
    preds, _ = read_predictions_csv(_require(out, PREDICTIONS, "train-eval"), cfg.suite.dim)
    features = ela.read_features_csv(_require(out, FEATURES, "extract-features"))
    paths = {k: os.path.join(out, v) for k, v in FIGURES.items()}

    # fig 1: per-instance performance heatmap
    _write_csv(
        paths[1], meta, ["fid", "iid", "algo_id", "median_precision", "log10_precision"],
        [(p.fid, p.iid, a, perf.precision[i, j], perf.log_precision[i, j])
         for i, p in enumerate(perf.instances) for j, a in enumerate(perf.algos)],
    )

    # fig 2: how often each algorithm is the per-instance best
    wins = Counter(perf.algos[j] for j in np.argmin(perf.precision, axis=1))
    _write_csv(paths[2], meta, ["algo_id", "wins"], [(a, wins.get(a, 0)) for a in algos])

    # fig 3: min-max normalized features, long format
    norm = ela.minmax_normalize(features.matrix)
    _write_csv(
        paths[3], meta, ["fid", "iid", "feature", "value"],
        [(p.fid, p.iid, name, norm[i, k]) for i, p in enumerate(features.problems) for k, name in enumerate(features.names)],
    )

    # fig 4: true vs predicted (median over replications)
    _write_csv(
        paths[4], meta, ["fid", "iid", "algo_id", "true_precision", "pred_unscaled", "pred_log10"],
        [(p.fid, p.iid, a, perf.precision[i, j], preds.pred_unscaled[i, j], preds.pred_log[i, j])
         for i, p in enumerate(preds.instances) for j, a in enumerate(preds.algos)],
    )

    # fig 5: quality of every configuration and selector against the VBS
    rows = [("config", a, v["rmse"], v["log_rmse"]) for a, v in report["baselines"]["per_algorithm"].items()]
    rows += [("selector", name, v["rmse"], v["log_rmse"]) for name, v in report["selectors"].items()]
    _write_csv(paths[5], meta, ["kind", "name", "rmse", "log_rmse"], rows)
    return paths


COMMANDS = OrderedDict(
    [
        ("run-portfolio", cmd_run_portfolio),
        ("select-portfolio", cmd_select_portfolio),
        ("extract-features", cmd_extract_features),
        ("train-eval", cmd_train_eval),
        ("tune-threshold", cmd_tune_threshold),
        ("report-figures", cmd_report_figures),
    ]
)


def _parse_set(items):
    overrides = {}
    for item in items or ():
        if "=" not in item:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = yaml.safe_load(value)
    return overrides


def build_parser():
    parser = argparse.ArgumentParser(prog="fbselect", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML/JSON pipeline config")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key, e.g. cv.k=3")
        if name == "extract-features":
            p.add_argument("--report-normalized", action="store_true", help="also write min-max normalized features")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        overrides = _parse_set(args.set)
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.jobs < 1:
            raise ValidationError("--jobs must be >= 1")
        cfg = cfgmod.load(args.config, overrides).validate()
        _prepare_out(args.out)
        kwargs = {"report_normalized": args.report_normalized} if args.command == "extract-features" else {}
        COMMANDS[args.command](cfg, args.out, args.jobs, **kwargs)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
