"""Per-instance algorithm selection on top of the two regression models.

Selectors choose, per test instance, the algorithm with the best predicted
precision under the unscaled model, the log10 model, or a threshold
combination of both. Quality is reported as RMSE / log-RMSE of the chosen
algorithm's true precision against the virtual best solver (VBS).
Ties are always resolved by algorithm list order.
"""

import csv
import logging
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import forest as rf
from .bench import ProblemId, _comment_lines, _data_lines
from .errors import ParseError, ValidationError
from .parallel import map_tasks
from .seeding import derive_seed

log = logging.getLogger(__name__)

METRICS = ("rmse", "log_rmse")
REFERENCE_THRESHOLDS = (0.01, 0.1, 0.5, 1.0, 2.0, 3.0, 10.0, 20.0, 50.0)
PREDICTION_COLUMNS = ("fold", "rep", "fid", "iid", "algo_id", "pred_unscaled", "pred_log10", "true_precision")


def default_threshold_grid():
    """Reference thresholds plus a 200-point log-spaced refinement of [0.01, 50]."""
    return sorted(set(REFERENCE_THRESHOLDS) | set(np.logspace(-2, np.log10(50), 200).tolist()))


@dataclass
class PerformanceMatrix:
    precision: np.ndarray  # (instances, algos)
    instances: list
    algos: list

    def __post_init__(self):
        self.precision = np.asarray(self.precision, dtype=float)
        if self.precision.shape != (len(self.instances), len(self.algos)):
            raise ValidationError(
                f"precision shape {self.precision.shape} != ({len(self.instances)}, {len(self.algos)})"
            )
        if not np.all(np.isfinite(self.precision)) or np.any(self.precision <= 0):
            raise ValidationError("performance matrix entries must be finite and positive")

    @classmethod
    def from_records(cls, records, algos=None):
        """Dense matrix of median precisions; raises if any cell is missing."""
        instances = sorted({r.problem for r in records})
        algos = list(algos) if algos is not None else list(dict.fromkeys(r.algo_id for r in records))
        cell = {(r.problem, r.algo_id): r.median_precision for r in records}
        missing = [(p, a) for p in instances for a in algos if (p, a) not in cell]
        if missing:
            shown = ", ".join(f"({p.fid}, {p.iid}) {a}" for p, a in missing[:10])
            raise ValidationError(f"performance matrix has {len(missing)} missing cells: {shown}")
        mat = np.array([[cell[(p, a)] for a in algos] for p in instances])
        return cls(mat, instances, algos)

    def subset(self, algos):
        cols = [self.algos.index(a) for a in algos]
        return PerformanceMatrix(self.precision[:, cols], list(self.instances), list(algos))

    @property
    def log_precision(self):
        return np.log10(self.precision)


@dataclass
class PredictionMatrix:
    pred_unscaled: np.ndarray  # (instances, algos), precision scale
    pred_log: np.ndarray  # (instances, algos), log10 precision
    instances: list
    algos: list
    # per (fold, rep, instance, algo) raw predictions, kept for the CSV
    raw: list = field(default_factory=list)

    def subset(self, algos):
        cols = [self.algos.index(a) for a in algos]
        raw = [r for r in self.raw if r["algo_id"] in set(algos)]
        return PredictionMatrix(self.pred_unscaled[:, cols], self.pred_log[:, cols], list(self.instances), list(algos), raw)


def _check_aligned(predmat, perf):
    if list(predmat.instances) != list(perf.instances) or list(predmat.algos) != list(perf.algos):
        raise ValidationError("prediction and performance matrices index different instances/algorithms")


# --------------------------------------------------------------------------
# baselines and metrics


def vbs(perf):
    """Per instance, (algo index, precision) of the truly best algorithm."""
    idx = np.argmin(perf.precision, axis=1)
    return idx, perf.precision[np.arange(len(idx)), idx]


def _as_indices(choices, perf):
    choices = list(choices)
    if len(choices) != len(perf.instances):
        raise ValidationError(f"{len(choices)} choices for {len(perf.instances)} instances")
    out = []
    for c in choices:
        if isinstance(c, (int, np.integer)):
            out.append(int(c))
        else:
            out.append(perf.algos.index(c))
    return np.array(out, dtype=int)


def selector_metric(choices, perf, metric="rmse"):
    """RMSE (or log-RMSE) of chosen precisions against the VBS precisions.

    ``choices`` holds one algo id (or column index) per instance, in
    ``perf.instances`` order.
    """
    idx = _as_indices(choices, perf)
    rows = np.arange(len(idx))
    chosen = perf.precision[rows, idx]
    _, best = vbs(perf)
    if metric == "rmse":
        diff = chosen - best
    elif metric == "log_rmse":
        diff = np.log10(chosen) - np.log10(best)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    return float(np.sqrt(np.mean(diff * diff)))


def sbs(perf, metric="rmse"):
    """The single algorithm minimising ``metric`` when chosen on every instance."""
    n = len(perf.instances)
    scores = [selector_metric([j] * n, perf, metric) for j in range(len(perf.algos))]
    j = int(np.argmin(scores))
    return perf.algos[j], scores[j]


# --------------------------------------------------------------------------
# selectors


def choices_unscaled(predmat):
    return np.argmin(predmat.pred_unscaled, axis=1)


def choices_log(predmat):
    return np.argmin(predmat.pred_log, axis=1)


def select_unscaled(predmat, instance):
    i = predmat.instances.index(instance)
    return predmat.algos[int(np.argmin(predmat.pred_unscaled[i]))]


def select_log(predmat, instance):
    i = predmat.instances.index(instance)
    return predmat.algos[int(np.argmin(predmat.pred_log[i]))]


def best_predicted_precision(predmat):
    """Per instance, 10 ** (lowest log-model prediction)."""
    return np.power(10.0, predmat.pred_log.min(axis=1))


def choices_combined(predmat, threshold):
    """Log-model choice where its best predicted precision is below ``threshold``."""
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    use_log = best_predicted_precision(predmat) < threshold
    return np.where(use_log, choices_log(predmat), choices_unscaled(predmat))


def select_combined(predmat, instance, threshold):
    i = predmat.instances.index(instance)
    return predmat.algos[int(choices_combined(predmat, threshold)[i])]


def choices_vbs_of_two(predmat, perf):
    """Per instance, the truly better of the unscaled and log choices."""
    _check_aligned(predmat, perf)
    a, b = choices_unscaled(predmat), choices_log(predmat)
    rows = np.arange(len(a))
    return np.where(perf.precision[rows, b] < perf.precision[rows, a], b, a)


def vbs_of_two(predmat, perf):
    return [predmat.algos[j] for j in choices_vbs_of_two(predmat, perf)]


def threshold_candidates(predmat, grid):
    """Grid thresholds plus one below every and one above every best prediction."""
    p_star = best_predicted_precision(predmat)
    lo = float(p_star.min()) / 2.0
    hi = float(p_star.max()) * 2.0
    if not np.isfinite(hi) or hi <= 0:
        hi = float(np.finfo(float).max)
    if lo <= 0:
        lo = float(np.finfo(float).tiny)
    cands = sorted(set(float(g) for g in grid if g > 0) | {lo, hi})
    return cands, lo, hi


def threshold_table(predmat, perf, thresholds):
    """(threshold, rmse, log_rmse) of the combined selector for each threshold."""
    _check_aligned(predmat, perf)
    return [
        (
            t,
            selector_metric(choices_combined(predmat, t), perf, "rmse"),
            selector_metric(choices_combined(predmat, t), perf, "log_rmse"),
        )
        for t in thresholds
    ]


def tune_threshold(predmat, perf, grid=None, metric="log_rmse"):
    """Threshold minimising ``metric`` (ties to the smaller threshold)."""
    grid = default_threshold_grid() if grid is None else list(grid)
    if not grid or any(not g > 0 for g in grid):
        raise ValueError("threshold grid must be non-empty and positive")
    _check_aligned(predmat, perf)
    cands, _, _ = threshold_candidates(predmat, grid)
    values = [selector_metric(choices_combined(predmat, t), perf, metric) for t in cands]
    i = int(np.argmin(values))
    return cands[i], values[i]


# --------------------------------------------------------------------------
# cross-validation


@dataclass
class CvConfig:
    k: int = 4
    replications: int = 3
    aggregation: str = "median"

    def __post_init__(self):
        if self.k < 2 or self.replications < 1:
            raise ValueError("cv needs k >= 2 and replications >= 1")
        if self.aggregation != "median":
            raise ValueError("only median aggregation is supported")


def assign_folds(instances, k):
    """Leave-one-instance-out folds: fold index per instance, keyed by iid.

    With as many distinct iids as folds every iid is its own fold; otherwise
    sorted iids are dealt round-robin into ``k`` folds.
    """
    iids = sorted({p.iid for p in instances})
    if len(iids) < 2:
        raise ValidationError("cross-validation needs at least two instance ids")
    if k > len(iids):
        raise ValidationError(f"k={k} folds but only {len(iids)} instance ids")
    fold_of = {iid: i % k for i, iid in enumerate(iids)}
    return np.array([fold_of[p.iid] for p in instances])


def _cv_task(task):
    X_train, y_train, X_test, params, seed_unscaled, seed_log, names = task
    m_u = rf.fit(X_train, y_train, params, seed_unscaled, names, "unscaled")
    m_l = rf.fit(X_train, np.log10(y_train), params, seed_log, names, "log10")
    return np.atleast_1d(rf.predict(m_u, X_test)), np.atleast_1d(rf.predict(m_l, X_test))


@dataclass
class EvalReport:
    selectors: OrderedDict
    baselines: OrderedDict
    models: OrderedDict
    threshold_table: list
    thresholds: OrderedDict
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "selectors": self.selectors,
            "baselines": self.baselines,
            "models": self.models,
            "threshold_table": self.threshold_table,
            "thresholds": self.thresholds,
            "config": self.config,
        }


def run_cv(features, perf, cv=None, forest_params=None, seed=0, jobs=1):
    """Cross-validated predictions for every algorithm, aggregated over replications.

    ``features`` is an :class:`~fbselect.ela.FeatureTable`. Returns the
    median prediction matrix; raw per-fold predictions are in ``.raw``.
    """
    cv = cv or CvConfig()
    forest_params = forest_params or rf.ForestParams()
    feat_keys = {p.key: i for i, p in enumerate(features.problems)}
    perf_keys = [p.key for p in perf.instances]
    missing = sorted(set(perf_keys) ^ set(feat_keys))
    if missing:
        raise ValidationError(
            "features and performance cover different instances; mismatched (fid, iid): " + ", ".join(map(str, missing))
        )
    X = features.matrix[[feat_keys[k] for k in perf_keys]]
    folds = assign_folds(perf.instances, cv.k)

    tasks, keys = [], []
    for j, algo in enumerate(perf.algos):
        y = perf.precision[:, j]
        for f in range(cv.k):
            train, test = folds != f, folds == f
            for r in range(cv.replications):
                s_u = derive_seed(seed, "cv", algo, f, r, "unscaled")
                s_l = derive_seed(seed, "cv", algo, f, r, "log10")
                tasks.append((X[train], y[train], X[test], forest_params, s_u, s_l, list(features.names)))
                keys.append((j, f, r))
    results = map_tasks(_cv_task, tasks, jobs)

    n_inst, n_alg = len(perf.instances), len(perf.algos)
    pu = np.full((cv.replications, n_inst, n_alg), np.nan)
    pl = np.full((cv.replications, n_inst, n_alg), np.nan)
    raw = []
    for (j, f, r), (u, l) in sorted(zip(keys, results), key=lambda kv: kv[0]):
        test_rows = np.nonzero(folds == f)[0]
        pu[r, test_rows, j] = u
        pl[r, test_rows, j] = l
        for row, vu, vl in zip(test_rows, u, l):
            p = perf.instances[row]
            raw.append(
                {
                    "fold": f,
                    "rep": r,
                    "fid": p.fid,
                    "iid": p.iid,
                    "algo_id": perf.algos[j],
                    "pred_unscaled": float(vu),
                    "pred_log10": float(vl),
                    "true_precision": float(perf.precision[row, j]),
                }
            )
    return PredictionMatrix(np.median(pu, axis=0), np.median(pl, axis=0), list(perf.instances), list(perf.algos), raw)


def model_accuracy(predmat, perf):
    """Per algorithm, RMSE of the unscaled model and log-RMSE of the log model."""
    _check_aligned(predmat, perf)
    out = OrderedDict()
    for j, algo in enumerate(perf.algos):
        out[algo] = {
            "rmse": rf.rmse(predmat.pred_unscaled[:, j], perf.precision[:, j]),
            "log_rmse": rf.rmse(predmat.pred_log[:, j], perf.log_precision[:, j]),
            # cross-scale errors, for the unscaled-vs-log trend comparison
            "rmse_of_log_model": rf.rmse(10.0 ** predmat.pred_log[:, j], perf.precision[:, j]),
            "log_rmse_of_unscaled_model": rf.rmse(
                np.log10(np.maximum(predmat.pred_unscaled[:, j], 1e-12)), perf.log_precision[:, j]
            ),
        }
    return out


def _per_instance(choices, perf):
    best_idx, best = vbs(perf)
    rows = []
    for i, (p, j) in enumerate(zip(perf.instances, choices)):
        rows.append(
            {
                "fid": p.fid,
                "iid": p.iid,
                "chosen_algo": perf.algos[int(j)],
                "chosen_precision": float(perf.precision[i, int(j)]),
                "vbs_algo": perf.algos[int(best_idx[i])],
                "vbs_precision": float(best[i]),
            }
        )
    return rows


def _selector_entry(choices, perf, threshold=None, **extra):
    entry = {
        "rmse": selector_metric(choices, perf, "rmse"),
        "log_rmse": selector_metric(choices, perf, "log_rmse"),
        "threshold": threshold,
    }
    entry.update(extra)
    entry["per_instance"] = _per_instance(choices, perf)
    return entry


def evaluate(predmat, perf, grid=None, table_thresholds=REFERENCE_THRESHOLDS):
    """Selector comparison, baselines, model accuracy and threshold sensitivity."""
    _check_aligned(predmat, perf)
    grid = default_threshold_grid() if grid is None else list(grid)
    cu, cl = choices_unscaled(predmat), choices_log(predmat)
    t_rmse, _ = tune_threshold(predmat, perf, grid, "rmse")
    t_log, _ = tune_threshold(predmat, perf, grid, "log_rmse")
    best_idx, _ = vbs(perf)

    selectors = OrderedDict()
    selectors["unscaled"] = _selector_entry(cu, perf)
    selectors["log"] = _selector_entry(cl, perf)
    selectors["combined_rmse"] = _selector_entry(
        choices_combined(predmat, t_rmse), perf, t_rmse, tuned_on="rmse", tuning="in-sample tuned"
    )
    selectors["combined_log_rmse"] = _selector_entry(
        choices_combined(predmat, t_log), perf, t_log, tuned_on="log_rmse", tuning="in-sample tuned"
    )
    selectors["vbs_of_two"] = _selector_entry(choices_vbs_of_two(predmat, perf), perf)

    sbs_rmse, v_rmse = sbs(perf, "rmse")
    sbs_log, v_log = sbs(perf, "log_rmse")
    baselines = OrderedDict()
    baselines["vbs"] = _selector_entry(best_idx, perf)
    baselines["sbs_unscaled_metric"] = {"algo": sbs_rmse, "rmse": v_rmse,
                                        "log_rmse": selector_metric([sbs_rmse] * len(perf.instances), perf, "log_rmse")}
    baselines["sbs_log_metric"] = {"algo": sbs_log, "log_rmse": v_log,
                                   "rmse": selector_metric([sbs_log] * len(perf.instances), perf, "rmse")}
    baselines["per_algorithm"] = OrderedDict(
        (a, {"rmse": selector_metric([a] * len(perf.instances), perf, "rmse"),
             "log_rmse": selector_metric([a] * len(perf.instances), perf, "log_rmse")})
        for a in perf.algos
    )

    table = [
        {"threshold": t, "rmse": r, "log_rmse": l} for t, r, l in threshold_table(predmat, perf, table_thresholds)
    ]
    _, lo, hi = threshold_candidates(predmat, grid)
    thresholds = OrderedDict(
        [("rmse", t_rmse), ("log_rmse", t_log), ("below_all", lo), ("above_all", hi), ("grid_size", len(grid))]
    )
    return EvalReport(selectors, baselines, model_accuracy(predmat, perf), table, thresholds)


# --------------------------------------------------------------------------
# predictions CSV


def write_predictions_csv(path, predmat, meta=None):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.writelines(_comment_lines(meta))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_COLUMNS)
        for r in predmat.raw:
            w.writerow(
                [r["fold"], r["rep"], r["fid"], r["iid"], r["algo_id"],
                 repr(r["pred_unscaled"]), repr(r["pred_log10"]), repr(r["true_precision"])]
            )


def read_predictions_csv(path, dim=5):
    """Rebuild (PredictionMatrix, PerformanceMatrix) from a predictions CSV."""
    raw = []
    with open(path, encoding="utf-8", newline="") as fh:
        lines = _data_lines(fh)
        try:
            lineno, header = next(lines)
        except StopIteration:
            raise ParseError("missing header row", line=1) from None
        if tuple(next(csv.reader([header]))) != PREDICTION_COLUMNS:
            raise ParseError(f"expected header {','.join(PREDICTION_COLUMNS)}", line=lineno)
        for lineno, line in lines:
            row = next(csv.reader([line]))
            if len(row) != len(PREDICTION_COLUMNS):
                raise ParseError(f"expected {len(PREDICTION_COLUMNS)} fields", line=lineno)
            try:
                raw.append(
                    {"fold": int(row[0]), "rep": int(row[1]), "fid": int(row[2]), "iid": int(row[3]),
                     "algo_id": row[4], "pred_unscaled": float(row[5]), "pred_log10": float(row[6]),
                     "true_precision": float(row[7])}
                )
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
    instances = sorted({ProblemId(r["fid"], r["iid"], dim) for r in raw})
    algos = list(dict.fromkeys(r["algo_id"] for r in raw))
    reps = max(r["rep"] for r in raw) + 1 if raw else 0
    ii = {p.key: i for i, p in enumerate(instances)}
    aj = {a: j for j, a in enumerate(algos)}
    pu = np.full((reps, len(instances), len(algos)), np.nan)
    pl = np.full_like(pu, np.nan)
    truth = np.full((len(instances), len(algos)), np.nan)
    for r in raw:
        i, j = ii[(r["fid"], r["iid"])], aj[r["algo_id"]]
        pu[r["rep"], i, j] = r["pred_unscaled"]
        pl[r["rep"], i, j] = r["pred_log10"]
        truth[i, j] = r["true_precision"]
    if np.isnan(pu).any() or np.isnan(truth).any():
        raise ValidationError("predictions CSV does not cover every (rep, instance, algo) cell")
    pred = PredictionMatrix(np.median(pu, axis=0), np.median(pl, axis=0), instances, algos, raw)
    return pred, PerformanceMatrix(truth, instances, algos)
