"""End-to-end acceptance criteria; each test records one PASS/FAIL line."""

import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

import oracles
from conftest import ACCEPTANCE, synthetic_matrices
from fbselect import cli, ela, forest as rf, modcma, selector as sel
from fbselect.bench import ProblemId, make_problem
from fbselect.forest import ForestParams
from fbselect.modcma import ModuleConfig

DESK_CONFIG = Path(__file__).parents[1] / "configs" / "desk_scale.yaml"
STAGES = ("run-portfolio", "extract-features", "train-eval", "tune-threshold", "report-figures")


def record(k, ok, detail):
    ACCEPTANCE[k] = (bool(ok), detail)
    print(f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    timings = {}
    for jobs in (1, 8):
        out = root / f"jobs{jobs}"
        t0 = time.perf_counter()
        for stage in STAGES:
            rc = cli.main([stage, "--config", str(DESK_CONFIG), "--out", str(out), "--jobs", str(jobs)])
            assert rc == 0, f"{stage} failed at --jobs {jobs}"
        timings[jobs] = time.perf_counter() - t0
    return root, timings


def test_c1_linear_slope_adj_r2():
    t0 = time.perf_counter()
    values = [
        ela.compute_features(make_problem(5, iid, 5), 2000, 50, seed=iid)["ela_meta.lin_simple.adj_r2"]
        for iid in (1, 2, 3, 4)
    ]
    dt = time.perf_counter() - t0
    record(1, min(values) >= 0.999 and dt < 120, f"min median adj_r2 {min(values):.12f}, {dt:.1f} s")


def test_c2_degeneration_laws():
    t0 = time.perf_counter()
    ok = True
    rng = np.random.default_rng(0)
    # a genuinely cross-validated prediction matrix
    inst = [ProblemId(f, i, 5) for f in (1, 2, 3) for i in (1, 2, 3, 4)]
    X = rng.uniform(size=(12, 4))
    perf = sel.PerformanceMatrix(10 ** (-8 * X[:, [0, 1, 2]] + 1), inst, ["a", "b", "c"])
    pm = sel.run_cv(ela.FeatureTable(inst, list("wxyz"), X), perf, sel.CvConfig(4, 1), ForestParams(n_trees=5), seed=1)
    mats = [pm] + [synthetic_matrices(s)[0] for s in range(20)]
    for m in mats:
        p_star = sel.best_predicted_precision(m)
        above, below = p_star.max() * 2, p_star.min() / 2
        ok &= np.array_equal(sel.choices_combined(m, above), sel.choices_log(m))
        ok &= np.array_equal(sel.choices_combined(m, below), sel.choices_unscaled(m))
    dt = time.perf_counter() - t0
    record(2, ok and dt < 1.0, f"{len(mats)} matrices, exact choice equality at both endpoints, {dt:.2f} s")


def _pure(pm, perf, metric):
    return (
        sel.selector_metric(sel.choices_unscaled(pm), perf, metric),
        sel.selector_metric(sel.choices_log(pm), perf, metric),
    )


def test_c3_tuned_threshold_dominance():
    t0 = time.perf_counter()
    worst = -math.inf
    for s in range(20):
        pm, perf = synthetic_matrices(s)
        for metric in ("rmse", "log_rmse"):
            _, v = sel.tune_threshold(pm, perf, None, metric)
            worst = max(worst, v - min(_pure(pm, perf, metric)))
    dt = time.perf_counter() - t0
    record(3, worst <= 0 and dt < 10, f"max(tuned - best pure) = {worst:.3g} over 20 matrices x 2 metrics, {dt:.2f} s")


def _vbs2_gap(pm, perf):
    return max(
        sel.selector_metric(sel.choices_vbs_of_two(pm, perf), perf, m) - min(_pure(pm, perf, m))
        for m in ("rmse", "log_rmse")
    )


def test_c4_vbs_of_two_dominance(desk):
    gaps = [_vbs2_gap(*synthetic_matrices(s)) for s in range(20)]
    pm, perf = sel.read_predictions_csv(desk[0] / "jobs1" / "predictions.csv")
    real = _vbs2_gap(pm, perf)
    record(4, max(gaps) <= 0 and real <= 0, f"max gap synthetic {max(gaps):.3g}, desk-scale {real:.3g}")


def test_c5_metric_oracles():
    def perf_of(chosen, best):
        return sel.PerformanceMatrix(
            np.column_stack([chosen, best]), [ProblemId(1, i + 1, 5) for i in range(len(chosen))], ["c", "v"]
        )

    cases = [
        (rf.rmse([3.0, -4.0], [0.0, 0.0]), 3.5355339059327378),
        (sel.selector_metric(["c", "c"], perf_of([4.0, 5.0], [1.0, 1.0]), "rmse"), 3.5355339059327378),
        (sel.selector_metric(["c", "c"], perf_of([1e-1, 1e-3], [1e-3, 1e-3]), "rmse"), math.sqrt(0.099**2 / 2)),
        (sel.selector_metric(["c", "c"], perf_of([1e-1, 1e-3], [1e-3, 1e-3]), "log_rmse"), math.sqrt(2)),
        (sel.selector_metric(["c"] * 3, perf_of([10.0, 1.0, 1e-4], [1.0, 1.0, 1e-6]), "log_rmse"), math.sqrt(5 / 3)),
        (sel.selector_metric(["c"] * 3, perf_of([2.0, 7.0, 1.0], [1.0, 1.0, 1.0]), "rmse"), math.sqrt(37 / 3)),
    ]
    # independent loop oracle agrees with the closed forms
    cases.append((oracles.rmse([3.0, -4.0], [0.0, 0.0]), 3.5355339059327378))
    err = max(abs(a - b) for a, b in cases)
    record(5, err <= 1e-12, f"{len(cases)} hand cases, max abs error {err:.2e}")


def test_c6_forest_equivariance():
    rng = np.random.default_rng(6)
    X = rng.uniform(-1, 1, size=(40, 5))
    y = np.sin(4 * X[:, 0]) + X[:, 1] * X[:, 2]
    q = rng.uniform(-1.2, 1.2, size=(500, 5))
    params = ForestParams(n_trees=100)
    base = rf.predict(rf.fit(X, y, params, seed=3), q)
    shifted = rf.predict(rf.fit(X, y + 1e6, params, seed=3), q)
    scaled = rf.predict(rf.fit(X, 7 * y, params, seed=3), q)
    rel_shift = np.max(np.abs(shifted - (base + 1e6)) / np.abs(base + 1e6))
    rel_scale = np.max(np.abs(scaled - 7 * base) / np.maximum(np.abs(7 * base), 1e-300))
    tree = rf.fit(X, y, ForestParams(n_trees=1, bootstrap=False), seed=0)
    memo = np.array_equal(rf.predict(tree, X), y)
    ok = rel_shift <= 1e-9 and rel_scale <= 1e-9 and memo
    record(6, ok, f"rel err shift {rel_shift:.1e}, scale {rel_scale:.1e}, memorization {memo}")


def test_c7_feature_oracles():
    rng = np.random.default_rng(2020)
    X = rng.uniform(-5, 5, size=(20, 2))
    y = (X**2).sum(axis=1) + 3 * np.sin(2 * X[:, 0]) * np.cos(X[:, 1])
    s = ela.SampleSet(X, y)
    grid = list(ela.IcSettings().epsilon_grid)
    pairs = [
        (ela.dispersion(s), oracles.dispersion(X, y)),
        (ela.nearest_better(s), oracles.nearest_better(X, y)),
        (ela.information_content(s), oracles.information_content(X, y, grid)),
    ]
    err = max(abs(got[k] - want[k]) for got, want in pairs for k in want)
    sym = ela.SampleSet(np.arange(7.0)[:, None], np.array([-3.0, -2, -1, 0, 1, 2, 3]))
    skew = abs(ela.ela_distr(sym)["ela_distr.skewness"])
    Xa = rng.uniform(-5, 5, size=(50, 3))
    adj = ela.ela_meta(ela.SampleSet(Xa, 1 - 2 * Xa[:, 0] + Xa[:, 2]))["ela_meta.lin_simple.adj_r2"]
    ok = err <= 1e-10 and skew <= 1e-12 and abs(adj - 1) <= 1e-9
    record(7, ok, f"brute-force max err {err:.1e} (26 features), skewness {skew:.1e}, affine adj_r2 {adj!r}")


def test_c8_desk_scale(desk):
    root, timings = desk
    report = json.loads((root / "jobs1" / "report.json").read_text())
    entries = [report["baselines"]["vbs"], *report["selectors"].values(), *report["baselines"]["per_algorithm"].values()]
    finite = all(math.isfinite(e[m]) for e in entries for m in ("rmse", "log_rmse"))
    finite &= all(math.isfinite(v) for m in report["models"].values() for v in m.values())
    vbs0 = report["baselines"]["vbs"]["rmse"] == 0 and report["baselines"]["vbs"]["log_rmse"] == 0
    models = report["models"]
    unscaled_rmse = sum(m["rmse"] < m["rmse_of_log_model"] for m in models.values())
    log_logrmse = sum(m["log_rmse"] < m["log_rmse_of_unscaled_model"] for m in models.values())
    trend = f"trend (not gated): unscaled lower RMSE {unscaled_rmse}/{len(models)}, log lower log-RMSE {log_logrmse}/{len(models)}"
    ok = vbs0 and finite and timings[1] < 1800 and len(report["portfolio"]) == 8
    record(8, ok, f"{timings[1]:.0f} s serial, VBS rmse 0: {vbs0}, metrics finite: {finite}; {trend}")


def test_c9_budget_and_determinism(desk):
    rng = np.random.default_rng(9)
    variants = modcma.enumerate_variants()
    over = 0
    for _ in range(1000):
        cfg = variants[rng.integers(len(variants))]
        budget = int(rng.integers(8, 501))
        p = make_problem(int(rng.choice([1, 2, 3, 5, 6, 9, 13, 14, 17, 21])), int(rng.integers(1, 5)), 5)
        res = modcma.run(p, cfg, budget=budget, seed=int(rng.integers(2**63)))
        over += not (p.eval_count == res.evals_used <= budget)
    root, _ = desk
    names = sorted(os.listdir(root / "jobs1"))
    same = names == sorted(os.listdir(root / "jobs8")) and all(
        (root / "jobs1" / n).read_bytes() == (root / "jobs8" / n).read_bytes() for n in names
    )
    record(9, over == 0 and same, f"{over}/1000 runs over budget; {len(names)} artifacts byte-identical at --jobs 1 vs 8: {same}")


def test_c10_enumeration():
    codes = [v.code for v in modcma.enumerate_variants()]
    ok = len(codes) == 4608 == len(set(codes)) and all(ModuleConfig.from_code(c).code == c for c in codes)
    record(10, ok, f"{len(set(codes))} distinct canonical codes")
