import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from fbselect import ela
from fbselect.bench import make_problem
from fbselect.errors import ValidationError


@pytest.fixture(scope="module")
def sample20():
    rng = np.random.default_rng(2020)
    X = rng.uniform(-5, 5, size=(20, 2))
    y = (X**2).sum(axis=1) + 3 * np.sin(2 * X[:, 0]) * np.cos(X[:, 1])
    return ela.SampleSet(X, y)


def test_feature_names():
    assert len(ela.FEATURE_NAMES) == 38 == len(set(ela.FEATURE_NAMES))
    assert len(ela.SELECTED_FEATURES) == 9 and set(ela.SELECTED_FEATURES) <= set(ela.FEATURE_NAMES)


@pytest.mark.parametrize(
    "group, oracle",
    [
        (ela.dispersion, lambda s: oracles.dispersion(s.X, s.y)),
        (ela.nearest_better, lambda s: oracles.nearest_better(s.X, s.y)),
        (ela.information_content, lambda s: oracles.information_content(s.X, s.y, list(ela.IcSettings().epsilon_grid))),
    ],
)
def test_brute_force(sample20, group, oracle):
    got, want = group(sample20), oracle(sample20)
    assert set(got) == set(want)
    for k in want:
        assert got[k] == pytest.approx(want[k], abs=1e-10), k


def test_ic_alternating_sequences():
    # points on a line, fitness alternating; tour visits them in order
    grid = ela.IcSettings().epsilon_grid
    for y, h in [([1, -1, 1, -1, 1, -1], math.log(2, 6)), ([1, -1, 1, -1, 1], None)]:
        X = np.arange(len(y), dtype=float)[:, None]
        got = ela.information_content(ela.SampleSet(X, np.array(y, dtype=float)))
        want = oracles.information_content(X, y, list(grid))
        assert got["ic.h.max"] == pytest.approx(want["ic.h.max"], abs=1e-12)
        if h is not None:
            assert got["ic.h.max"] == pytest.approx(h, abs=1e-12)


def test_symmetric_skewness_and_affine_adj_r2():
    X = np.array([[-2.0, 1], [-1, 0], [0, 3], [1, -2], [2, 4], [0.5, 0.5]])
    y = np.array([-3.0, -1, 0, 1, 3, 0])
    assert ela.ela_distr(ela.SampleSet(X, y))["ela_distr.skewness"] == pytest.approx(0, abs=1e-15)
    rng = np.random.default_rng(0)
    X = rng.uniform(-5, 5, size=(60, 3))
    meta = ela.ela_meta(ela.SampleSet(X, 2 + X @ np.array([1.0, -3, 0.5])))
    assert meta["ela_meta.lin_simple.adj_r2"] == pytest.approx(1, abs=1e-9)
    assert meta["ela_meta.lin_simple.intercept"] == pytest.approx(2)
    assert meta["ela_meta.lin_simple.coef.min"] == pytest.approx(0.5)
    assert meta["ela_meta.lin_simple.coef.max"] == pytest.approx(3)


def test_quadratic_fit_of_sphere():
    rng = np.random.default_rng(1)
    X = rng.uniform(-5, 5, size=(100, 2))
    meta = ela.ela_meta(ela.SampleSet(X, (X**2).sum(1)))
    assert meta["ela_meta.quad_simple.adj_r2"] == pytest.approx(1, abs=1e-9)
    assert meta["ela_meta.quad_simple.cond"] == pytest.approx(1, rel=1e-6)


def test_constant_fitness_is_finite():
    X = np.random.default_rng(3).uniform(-5, 5, size=(30, 2))
    f = ela.all_features(ela.SampleSet(X, np.full(30, 4.0)))
    assert all(np.isfinite(v) for v in f.values())
    assert f["nbc.nb_fitness.cor"] == 0 and f["ic.h.max"] == 0


@given(arrays(np.float64, (15, 2), elements=st.floats(-5, 5)), st.floats(0.1, 100), st.floats(-1e3, 1e3))
def test_dispersion_invariant_to_monotone_y(X, a, b):
    y = (X**2).sum(axis=1) + 1e-3 * np.arange(15)
    if len(np.unique(X, axis=0)) < 15:
        return
    one = ela.dispersion(ela.SampleSet(X, y))
    two = ela.dispersion(ela.SampleSet(X, a * y + b))
    for k in one:
        assert one[k] == pytest.approx(two[k], abs=1e-12)


@given(st.integers(0, 2**31))
def test_linear_slope_adj_r2_is_one(seed):
    s = ela.uniform_sample(make_problem(5, 1 + seed % 4, 5), 60, seed)
    assert ela.ela_meta(s)["ela_meta.lin_simple.adj_r2"] == pytest.approx(1, abs=1e-9)


def test_compute_features_median_and_determinism():
    p = make_problem(6, 1, 2)
    a = ela.compute_features(p, 40, 3, seed=11)
    b = ela.compute_features(make_problem(6, 1, 2), 40, 3, seed=11)
    assert a.values == b.values and a.replicates.shape == (3, 38)
    assert np.allclose(a.to_array(), np.median(a.replicates, axis=0))


def test_sample_size_minimum():
    with pytest.raises(ValueError):
        ela.uniform_sample(make_problem(1, 1, 5), 49, 0)


def test_select_and_subset_errors():
    v = ela.compute_features(make_problem(1, 1, 2), 20, 1, 0)
    sel = ela.select_features(v, ela.SELECTED_FEATURES)
    assert sel.names == ela.SELECTED_FEATURES
    with pytest.raises(KeyError, match="available"):
        ela.select_features(v, ["nope"])
    with pytest.raises(ValueError):
        ela.select_features(v, ["basic.y_min", "basic.y_min"])
    with pytest.raises(ValidationError):
        ela.resolve_subset("some")
    assert ela.resolve_subset("all") == list(ela.FEATURE_NAMES)


@given(arrays(np.float64, (6, 3), elements=st.floats(-1e6, 1e6)))
def test_minmax_in_unit_interval(m):
    n = ela.minmax_normalize(m)
    assert np.all((n >= 0) & (n <= 1))


def test_features_csv_roundtrip(tmp_path):
    vecs = [ela.compute_features(make_problem(f, 1, 2), 20, 1, 0) for f in (1, 2)]
    table = ela.FeatureTable.from_vectors(vecs)
    path = tmp_path / "f.csv"
    ela.write_features_csv(path, table, {"master_seed": 3})
    back = ela.read_features_csv(path)
    assert back.problems == table.problems and back.names == table.names
    assert np.array_equal(back.matrix, table.matrix) and back.n_samples == 20
