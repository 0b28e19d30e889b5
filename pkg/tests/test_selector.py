import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import synthetic_matrices
from fbselect import selector as sel
from fbselect.bench import PerformanceRecord, ProblemId
from fbselect.ela import FeatureTable
from fbselect.errors import ValidationError
from fbselect.forest import ForestParams


def _perf(mat, algos=None):
    mat = np.asarray(mat, dtype=float)
    return sel.PerformanceMatrix(
        mat, [ProblemId(1, i + 1, 5) for i in range(mat.shape[0])], algos or [f"a{j}" for j in range(mat.shape[1])]
    )


def _pred(pu, pl, perf):
    return sel.PredictionMatrix(np.asarray(pu, float), np.asarray(pl, float), perf.instances, perf.algos)


def test_vbs_examples():
    perf = _perf([[1e-3, 1e-5], [1e-2, 1e-1]])
    idx, best = sel.vbs(perf)
    assert list(idx) == [1, 0] and list(best) == [1e-5, 1e-2]
    assert sel.selector_metric(idx, perf, "rmse") == 0 == sel.selector_metric(idx, perf, "log_rmse")
    one = _perf([[3.0], [4.0]])
    assert list(sel.vbs(one)[0]) == [0, 0]
    assert sel.sbs(one, "rmse")[0] == "a0" == sel.sbs(one, "log_rmse")[0]


@pytest.mark.parametrize(
    "chosen, best, metric, want",
    [
        ([1e-1, 1e-3], [1e-3, 1e-3], "rmse", math.sqrt(0.099**2 / 2)),
        ([1e-1, 1e-3], [1e-3, 1e-3], "log_rmse", math.sqrt(2)),
        ([4.0, 5.0], [1.0, 1.0], "rmse", 3.5355339059327378),  # errors {3, 4}
        ([10.0, 1.0, 1e-4], [1.0, 1.0, 1e-6], "log_rmse", math.sqrt(5 / 3)),
    ],
)
def test_metric_oracle(chosen, best, metric, want):
    # column 0 = chosen, column 1 = best (ties: choose col 0 only when it is the best)
    perf = _perf(np.column_stack([chosen, np.minimum(best, chosen)]))
    assert sel.selector_metric([0] * len(chosen), perf, metric) == pytest.approx(want, abs=1e-12)


def test_metric_accepts_names_and_checks_length():
    perf = _perf([[1.0, 2.0], [3.0, 1.0]])
    assert sel.selector_metric(["a0", "a1"], perf) == 0
    with pytest.raises(ValidationError):
        sel.selector_metric(["a0"], perf)


def test_ties_go_to_first_algo():
    perf = _perf([[1.0, 1.0, 1.0]])
    pm = _pred([[5.0, 5.0, 5.0]], [[-2.0, -8.0, -1.0]], perf)
    assert sel.select_unscaled(pm, perf.instances[0]) == "a0"
    assert sel.select_log(pm, perf.instances[0]) == "a1"


def test_combined_rule():
    perf = _perf([[1.0, 2.0], [1.0, 2.0]])
    pm = _pred([[1.0, 0.5], [1.0, 0.5]], [[-3.0, -1.0], [0.0, 1.0]], perf)
    # instance 0: p* = 1e-3, instance 1: p* = 1
    assert list(sel.choices_combined(pm, 0.01)) == [0, 1]
    assert list(sel.choices_combined(pm, 100)) == [0, 0]
    assert list(sel.choices_combined(pm, 1e-4)) == [1, 1]
    assert sel.select_combined(pm, perf.instances[0], 0.01) == "a0"
    with pytest.raises(ValueError):
        sel.choices_combined(pm, 0)


@given(st.integers(0, 10_000))
def test_degeneration_laws(seed):
    pm, perf = synthetic_matrices(seed, 12, 4)
    p_star = sel.best_predicted_precision(pm)
    assert np.array_equal(sel.choices_combined(pm, p_star.max() * 1.0001), sel.choices_log(pm))
    assert np.array_equal(sel.choices_combined(pm, p_star.min()), sel.choices_unscaled(pm))


@given(st.integers(0, 10_000), st.sampled_from(["rmse", "log_rmse"]))
def test_dominance_and_tuning(seed, metric):
    pm, perf = synthetic_matrices(seed, 12, 4)
    pure = min(sel.selector_metric(sel.choices_unscaled(pm), perf, metric),
               sel.selector_metric(sel.choices_log(pm), perf, metric))
    assert sel.selector_metric(sel.choices_vbs_of_two(pm, perf), perf, metric) <= pure
    assert sel.tune_threshold(pm, perf, [1.0], metric)[1] <= pure


@given(st.integers(0, 10_000))
def test_argmin_invariance(seed):
    pm, _ = synthetic_matrices(seed, 8, 5)
    warped = sel.PredictionMatrix(np.arctan(pm.pred_unscaled) * 3 + 1, np.exp(pm.pred_log / 10), pm.instances, pm.algos)
    assert np.array_equal(sel.choices_unscaled(pm), sel.choices_unscaled(warped))
    assert np.array_equal(sel.choices_log(pm), np.argmin(warped.pred_log, axis=1))


def test_tune_ties_to_smaller_threshold():
    perf = _perf([[1.0, 2.0]])
    pm = _pred([[1.0, 2.0]], [[0.0, 1.0]], perf)  # both selectors agree
    t, v = sel.tune_threshold(pm, perf, [0.1, 5.0, 10.0])
    assert v == 0 and t == 0.1
    with pytest.raises(ValueError):
        sel.tune_threshold(pm, perf, [])


def test_from_records_dense_check():
    recs = [PerformanceRecord(ProblemId(1, i, 5), a, (1.0,), 500) for i in (1, 2) for a in ("x", "y")]
    perf = sel.PerformanceMatrix.from_records(recs)
    assert perf.algos == ["x", "y"] and perf.precision.shape == (2, 2)
    with pytest.raises(ValidationError, match=r"\(1, 2\) y"):
        sel.PerformanceMatrix.from_records(recs[:-1])
    with pytest.raises(ValidationError):
        _perf([[0.0]])


def test_folds():
    inst = [ProblemId(f, i, 5) for f in (1, 2) for i in (1, 2, 3, 4)]
    folds = sel.assign_folds(inst, 4)
    for f in range(4):
        assert sorted({p.iid for p, k in zip(inst, folds) if k == f}) == [f + 1]
    with pytest.raises(ValidationError):
        sel.assign_folds(inst, 5)


def _cv_inputs(seed=0):
    rng = np.random.default_rng(seed)
    inst = [ProblemId(f, i, 5) for f in (1, 2, 3) for i in (1, 2, 3, 4)]
    X = rng.uniform(size=(len(inst), 3))
    perf = sel.PerformanceMatrix(10 ** (-6 * X[:, [0]] + rng.normal(0, 1, (len(inst), 3))), inst, ["a", "b", "c"])
    return FeatureTable(inst, ["f0", "f1", "f2"], X), perf


def test_run_cv_shapes_and_determinism():
    feats, perf = _cv_inputs()
    cv = sel.CvConfig(k=4, replications=2)
    a = sel.run_cv(feats, perf, cv, ForestParams(n_trees=5), seed=3)
    b = sel.run_cv(feats, perf, cv, ForestParams(n_trees=5), seed=3, jobs=2)
    assert a.pred_log.shape == (12, 3) and len(a.raw) == 12 * 3 * 2
    assert np.array_equal(a.pred_log, b.pred_log) and a.raw == b.raw


def test_run_cv_single_rep_is_raw():
    feats, perf = _cv_inputs(1)
    pm = sel.run_cv(feats, perf, sel.CvConfig(k=4, replications=1), ForestParams(n_trees=3), seed=0)
    for r in pm.raw:
        i = [p.key for p in pm.instances].index((r["fid"], r["iid"]))
        assert pm.pred_log[i, pm.algos.index(r["algo_id"])] == r["pred_log10"]


def test_run_cv_coverage_mismatch():
    feats, perf = _cv_inputs()
    short = FeatureTable(feats.problems[1:], feats.names, feats.matrix[1:])
    with pytest.raises(ValidationError, match=r"\(1, 1\)"):
        sel.run_cv(short, perf, sel.CvConfig(), ForestParams(n_trees=2))


def test_perfect_predictor_model_error_zero():
    pm, perf = synthetic_matrices(0, 8, 3)
    exact = sel.PredictionMatrix(perf.precision.copy(), perf.log_precision.copy(), perf.instances, perf.algos)
    for m in sel.model_accuracy(exact, perf).values():
        assert m["rmse"] == 0 and m["log_rmse"] == 0


def test_evaluate_report(tmp_path):
    pm, perf = synthetic_matrices(4, 12, 4)
    grid = [0.01, 0.1, 1.0, 10.0]
    rep = sel.evaluate(pm, perf, grid, table_thresholds=grid).to_dict()
    assert rep["baselines"]["vbs"]["rmse"] == 0 and rep["baselines"]["vbs"]["log_rmse"] == 0
    s = rep["selectors"]
    assert s["combined_log_rmse"]["log_rmse"] <= min(s["log"]["log_rmse"], s["unscaled"]["log_rmse"])
    assert s["combined_rmse"]["rmse"] <= min(s["log"]["rmse"], s["unscaled"]["rmse"])
    assert len(rep["threshold_table"]) == len(grid)
    assert set(s["unscaled"]["per_instance"][0]) == {"fid", "iid", "chosen_algo", "chosen_precision", "vbs_algo", "vbs_precision"}


def test_predictions_csv_roundtrip(tmp_path):
    feats, perf = _cv_inputs()
    pm = sel.run_cv(feats, perf, sel.CvConfig(k=4, replications=2), ForestParams(n_trees=3), seed=1)
    path = tmp_path / "p.csv"
    sel.write_predictions_csv(path, pm, {"master_seed": 1})
    back, truth = sel.read_predictions_csv(path)
    assert np.array_equal(back.pred_log, pm.pred_log) and np.array_equal(back.pred_unscaled, pm.pred_unscaled)
    assert np.array_equal(truth.precision, perf.precision)
