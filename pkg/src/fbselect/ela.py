"""Exploratory landscape analysis features from uniform samples.

Five feature families are computed from one ``(X, y)`` sample: y-distribution
moments, linear/quadratic meta-models, dispersion, information content and
nearest-better clustering, plus four basic y statistics. Names follow the
flacco conventions (``disp.diff_mean_02``, ``ic.eps.s``, ...).

Degenerate inputs (constant y, coincident points) produce documented finite
sentinels instead of NaN/inf so the regression stage never sees non-finite
values.
"""

import csv
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .bench import LOWER, UPPER, ProblemId, _comment_lines, _data_lines
from .errors import ParseError, ValidationError
from .seeding import derive_seed

log = logging.getLogger(__name__)

DISPERSION_QUANTILES = (0.02, 0.05, 0.1, 0.25)


def _q_label(q):
    return f"{int(round(q * 100)):02d}"


FEATURE_NAMES = (
    ("ela_distr.skewness", "ela_distr.kurtosis")
    + (
        "ela_meta.lin_simple.adj_r2",
        "ela_meta.lin_simple.intercept",
        "ela_meta.lin_simple.coef.min",
        "ela_meta.lin_simple.coef.max",
        "ela_meta.quad_simple.adj_r2",
        "ela_meta.quad_simple.cond",
    )
    + tuple(
        f"disp.{kind}_{stat}_{_q_label(q)}"
        for kind in ("ratio", "diff")
        for stat in ("mean", "median")
        for q in DISPERSION_QUANTILES
    )
    + ("ic.h.max", "ic.eps.s", "ic.eps.max", "ic.eps.ratio", "ic.m0")
    + (
        "nbc.nn_nb.sd_ratio",
        "nbc.nn_nb.mean_ratio",
        "nbc.nn_nb.cor",
        "nbc.dist_ratio.coeff_var",
        "nbc.nb_fitness.cor",
    )
    + ("basic.y_min", "basic.y_max", "basic.y_mean", "basic.y_sd")
)

SELECTED_FEATURES = (
    "disp.diff_mean_02",
    "ela_distr.skewness",
    "ela_meta.lin_simple.adj_r2",
    "ela_meta.lin_simple.coef.max",
    "ela_meta.lin_simple.intercept",
    "ela_meta.quad_simple.adj_r2",
    "ic.eps.ratio",
    "ic.eps.s",
    "nbc.nb_fitness.cor",
)


@dataclass
class SampleSet:
    X: np.ndarray
    y: np.ndarray
    seed: int = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError(f"X {self.X.shape} and y {self.y.shape} disagree")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def dim(self):
        return self.X.shape[1]


def _default_grid():
    return np.concatenate([[0.0], 10.0 ** np.arange(-5.0, 15.0 + 1e-9, 0.25)])


@dataclass
class IcSettings:
    epsilon_grid: np.ndarray = field(default_factory=_default_grid)
    settling_threshold: float = 0.05
    half_ratio: float = 0.5
    # None starts the tour at row 0; an int picks a seeded random start row
    tour_seed: int = None

    def __post_init__(self):
        g = np.asarray(self.epsilon_grid, dtype=float)
        if g.ndim != 1 or len(g) < 2 or np.any(np.diff(g) <= 0) or g[0] < 0:
            raise ValueError("epsilon grid must be non-negative and strictly increasing")
        if not (0 < self.settling_threshold < 1 and 0 < self.half_ratio < 1):
            raise ValueError("IC thresholds must lie in (0, 1)")
        self.epsilon_grid = g


@dataclass
class FeatureVector:
    values: OrderedDict
    problem: ProblemId = None
    n_samples: int = None
    n_reps: int = None
    # per-replication raw values, shape (reps, len(values)); kept for reports
    replicates: np.ndarray = None

    @property
    def names(self):
        return tuple(self.values)

    def to_array(self):
        return np.array(list(self.values.values()), dtype=float)

    def __len__(self):
        return len(self.values)

    def __getitem__(self, name):
        return self.values[name]


# --------------------------------------------------------------------------
# sampling


def uniform_sample(problem, n, seed):
    """``n`` i.i.d. uniform points in the box, evaluated on ``problem``."""
    d = problem.dim
    if n < 10 * d:
        raise ValueError(f"sample size {n} below the minimum 10*d = {10 * d}")
    rng = np.random.default_rng(seed)
    X = rng.uniform(LOWER, UPPER, size=(n, d))
    return SampleSet(X, problem.evaluate_many(X), seed)


# --------------------------------------------------------------------------
# helpers


def _pearson(a, b):
    a = np.asarray(a, dtype=float) - np.mean(a)
    b = np.asarray(b, dtype=float) - np.mean(b)
    den = math.sqrt(float(np.dot(a, a)) * float(np.dot(b, b)))
    if den == 0.0:
        return 0.0
    return float(np.clip(np.dot(a, b) / den, -1.0, 1.0))


def _ratio(a, b):
    """a / b with 0/0 -> 1 and x/0 -> 0 (both sentinels)."""
    if b == 0:
        return 1.0 if a == 0 else 0.0
    return float(a / b)


def _adj_r2(y, fitted, p):
    n = len(y)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum((y - fitted) ** 2))
    if ss_tot == 0.0:
        return 1.0
    r2 = 1.0 - ss_res / ss_tot
    return 1.0 - (1.0 - r2) * (n - 1) / (n - p - 1)


def _best_order(y):
    """Indices sorted by fitness, ties broken by sample index."""
    return np.lexsort((np.arange(len(y)), y))


# --------------------------------------------------------------------------
# feature families


def ela_distr(sample):
    """Moment skewness and excess kurtosis of y (both 0 for constant y)."""
    y = sample.y
    c = y - y.mean()
    m2 = float(np.mean(c**2))
    if m2 == 0.0:
        return OrderedDict([("ela_distr.skewness", 0.0), ("ela_distr.kurtosis", 0.0)])
    m3 = float(np.mean(c**3))
    m4 = float(np.mean(c**4))
    return OrderedDict([("ela_distr.skewness", m3 / m2**1.5), ("ela_distr.kurtosis", m4 / m2**2 - 3.0)])


def ela_meta(sample, diagnostics=None):
    """Simple linear and quadratic (no interaction) least-squares meta-models.

    Rank-deficient designs are solved by pseudo-inverse; if ``diagnostics``
    is a dict the flag ``ela_meta.rank_deficient`` is set in it.
    """
    X, y = sample.X, sample.y
    n, d = X.shape
    if n <= 2 * d + 1:
        raise ValueError(f"meta-models need n > 2d+1 samples, got n={n}, d={d}")
    ones = np.ones((n, 1))
    lin = np.hstack([ones, X])
    quad = np.hstack([ones, X, X * X])
    rank_deficient = False
    coefs = []
    for design in (lin, quad):
        beta, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
        rank_deficient |= rank < design.shape[1]
        coefs.append(beta)
    if rank_deficient:
        log.warning("ela_meta: rank-deficient design, solved by pseudo-inverse")
    if diagnostics is not None:
        diagnostics["ela_meta.rank_deficient"] = bool(rank_deficient)

    b_lin, b_quad = coefs
    slopes = np.abs(b_lin[1:])
    q = np.abs(b_quad[1 + d :])
    if q.min() > 0:
        cond = float(q.max() / q.min())
    else:
        cond = 1.0 if q.max() == 0 else float(np.finfo(float).max)
    return OrderedDict(
        [
            ("ela_meta.lin_simple.adj_r2", _adj_r2(y, lin @ b_lin, d)),
            ("ela_meta.lin_simple.intercept", float(b_lin[0])),
            ("ela_meta.lin_simple.coef.min", float(slopes.min())),
            ("ela_meta.lin_simple.coef.max", float(slopes.max())),
            ("ela_meta.quad_simple.adj_r2", _adj_r2(y, quad @ b_quad, 2 * d)),
            ("ela_meta.quad_simple.cond", cond),
        ]
    )


def _subset_size(n, q):
    # at least two points so a pairwise distance exists
    return min(n, max(2, math.ceil(n * q - 1e-9)))


def dispersion(sample, quantiles=DISPERSION_QUANTILES, dist=None):
    """Pairwise-distance spread of the best ``ceil(n*q)`` points vs. all points."""
    X, y = sample.X, sample.y
    n = len(y)
    if n < 2:
        raise ValueError("dispersion needs at least two points")
    D = squareform(pdist(X)) if dist is None else dist
    iu = np.triu_indices(n, 1)
    all_d = D[iu]
    mean_all, med_all = float(all_d.mean()), float(np.median(all_d))
    order = _best_order(y)
    out = OrderedDict()
    stats = {}
    for q in quantiles:
        k = _subset_size(n, q)
        idx = np.sort(order[:k])
        sub = D[np.ix_(idx, idx)][np.triu_indices(k, 1)]
        stats[q] = (float(sub.mean()), float(np.median(sub)))
    for kind in ("ratio", "diff"):
        for si, stat in enumerate(("mean", "median")):
            ref = (mean_all, med_all)[si]
            for q in quantiles:
                v = stats[q][si]
                out[f"disp.{kind}_{stat}_{_q_label(q)}"] = _ratio(v, ref) if kind == "ratio" else v - ref
    return out


def nearest_neighbor_tour(X, start=0, dist=None):
    """Greedy nearest-neighbour ordering of the rows of X (ties to lower index)."""
    n = len(X)
    D = squareform(pdist(X)) if dist is None else dist
    visited = np.zeros(n, dtype=bool)
    order = np.empty(n, dtype=int)
    cur = start
    for i in range(n):
        order[i] = cur
        visited[cur] = True
        if i == n - 1:
            break
        row = np.where(visited, np.inf, D[cur])
        cur = int(np.argmin(row))
    return order


def _symbols(phi, eps):
    return np.where(phi > eps, 1, np.where(phi < -eps, -1, 0))


def _entropy(psi):
    """-sum_{a != b} p_ab log6 p_ab over consecutive symbol pairs."""
    if len(psi) < 2:
        return 0.0
    codes = (psi[:-1] + 1) * 3 + (psi[1:] + 1)
    counts = np.bincount(codes, minlength=9).astype(float)
    p = counts / counts.sum()
    h = 0.0
    for a in range(3):
        for b in range(3):
            pab = p[a * 3 + b]
            if a != b and pab > 0:
                h -= pab * math.log(pab, 6)
    return h


def _partial_length(psi):
    """Length of psi after deleting zeros and collapsing runs of equal symbols."""
    nz = psi[psi != 0]
    if len(nz) == 0:
        return 0
    return 1 + int(np.count_nonzero(nz[1:] != nz[:-1]))


def information_content(sample, settings=None, dist=None):
    """Information content of the fitness sequence along a nearest-neighbour tour."""
    settings = settings or IcSettings()
    X, y = sample.X, sample.y
    n = len(y)
    if n < 3:
        raise ValueError("information content needs at least three points")
    grid = settings.epsilon_grid
    eps_min = grid[grid > 0][0]
    if np.ptp(y) == 0:
        return OrderedDict(
            [
                ("ic.h.max", 0.0),
                ("ic.eps.s", math.log10(eps_min)),
                ("ic.eps.max", float(eps_min)),
                ("ic.eps.ratio", math.log10(eps_min)),
                ("ic.m0", 0.0),
            ]
        )
    D = squareform(pdist(X)) if dist is None else dist
    start = 0 if settings.tour_seed is None else int(np.random.default_rng(settings.tour_seed).integers(n))
    tour = nearest_neighbor_tour(X, start, D)
    steps = D[tour[:-1], tour[1:]]
    dy = np.diff(y[tour])
    keep = steps > 0
    phi = dy[keep] / steps[keep]

    H = np.empty(len(grid))
    M = np.empty(len(grid))
    for i, eps in enumerate(grid):
        psi = _symbols(phi, eps)
        H[i] = _entropy(psi)
        M[i] = _partial_length(psi) / (n - 1)

    i_max = int(np.argmax(H))
    positive = grid > 0
    settled = positive & (H < settings.settling_threshold)
    eps_s = grid[np.argmax(settled)] if settled.any() else grid[-1]
    m0 = float(M[0]) if grid[0] == 0 else float(_partial_length(_symbols(phi, 0.0)) / (n - 1))
    half = positive & (M >= settings.half_ratio * m0)
    eps_ratio = grid[np.nonzero(half)[0][-1]] if half.any() else eps_min
    return OrderedDict(
        [
            ("ic.h.max", float(H[i_max])),
            ("ic.eps.s", math.log10(eps_s)),
            ("ic.eps.max", float(grid[i_max])),
            ("ic.eps.ratio", math.log10(eps_ratio)),
            ("ic.m0", m0),
        ]
    )


def nearest_better_graph(y, D):
    """For each point: nearest-neighbour distance, nearest-better distance and index.

    "Better" means lower fitness, or equal fitness and lower sample index.
    The best point gets ``nb = nan`` and ``nb_index = -1``. Equidistant
    nearest-better candidates resolve to the better-ranked one.
    """
    n = len(y)
    order = _best_order(y)
    masked = D.copy()
    np.fill_diagonal(masked, np.inf)
    nn = masked.min(axis=1)

    Ds = D[np.ix_(order, order)]
    lower = np.tril(np.ones((n, n), dtype=bool), -1)
    Ds = np.where(lower, Ds, np.inf)
    pos = np.argmin(Ds[1:], axis=1)
    nb = np.full(n, np.nan)
    nb_index = np.full(n, -1)
    nb[order[1:]] = Ds[np.arange(1, n), pos]
    nb_index[order[1:]] = order[pos]
    return nn, nb, nb_index, order[0]


def nearest_better(sample, dist=None):
    """Nearest-better clustering features.

    Statistics over nn/nb distances use every point except the best one.
    Standard deviations use ddof=1. Points with nn == 0 (duplicates) are left
    out of the distance-ratio statistic. Constant fitness sets both
    correlation features to 0.
    """
    X, y = sample.X, sample.y
    n = len(y)
    if n < 3:
        raise ValueError("nearest-better features need at least three points")
    D = squareform(pdist(X)) if dist is None else dist
    nn, nb, nb_index, best = nearest_better_graph(y, D)
    rest = np.ones(n, dtype=bool)
    rest[best] = False
    nn_r, nb_r = nn[rest], nb[rest]

    indegree = np.bincount(nb_index[rest], minlength=n)
    ok = nn_r > 0
    ratio = nb_r[ok] / nn_r[ok]
    if len(ratio) >= 2 and ratio.mean() > 0:
        coeff_var = float(np.std(ratio, ddof=1) / ratio.mean())
    else:
        coeff_var = 0.0
    constant = np.ptp(y) == 0
    return OrderedDict(
        [
            ("nbc.nn_nb.sd_ratio", _ratio(np.std(nn_r, ddof=1), np.std(nb_r, ddof=1))),
            ("nbc.nn_nb.mean_ratio", _ratio(nn_r.mean(), nb_r.mean())),
            ("nbc.nn_nb.cor", 0.0 if constant else _pearson(nn_r, nb_r)),
            ("nbc.dist_ratio.coeff_var", coeff_var),
            ("nbc.nb_fitness.cor", 0.0 if constant else _pearson(y, indegree)),
        ]
    )


def basic(sample):
    y = sample.y
    return OrderedDict(
        [
            ("basic.y_min", float(y.min())),
            ("basic.y_max", float(y.max())),
            ("basic.y_mean", float(y.mean())),
            ("basic.y_sd", float(np.std(y, ddof=1)) if len(y) > 1 else 0.0),
        ]
    )


def all_features(sample, settings=None):
    """Every feature in :data:`FEATURE_NAMES` order for one sample."""
    D = squareform(pdist(sample.X))
    values = OrderedDict()
    values.update(ela_distr(sample))
    values.update(ela_meta(sample))
    values.update(dispersion(sample, dist=D))
    values.update(information_content(sample, settings, dist=D))
    values.update(nearest_better(sample, dist=D))
    values.update(basic(sample))
    assert tuple(values) == FEATURE_NAMES
    for k, v in values.items():
        if not math.isfinite(v):
            log.warning("non-finite feature %s replaced by 0", k)
            values[k] = 0.0
    return values


def compute_features(problem, n, reps, seed, settings=None):
    """Median of every feature over ``reps`` independent uniform samples."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    rows = []
    for r in range(reps):
        sample = uniform_sample(problem, n, derive_seed(seed, "ela", r))
        rows.append(list(all_features(sample, settings).values()))
    rows = np.array(rows)
    med = np.median(rows, axis=0)
    return FeatureVector(
        OrderedDict(zip(FEATURE_NAMES, map(float, med))),
        problem=problem.id,
        n_samples=n,
        n_reps=reps,
        replicates=rows,
    )


def select_features(vector, names):
    """Project a feature vector onto ``names``, keeping the given order."""
    names = list(names)
    dupes = sorted({x for x in names if names.count(x) > 1})
    if dupes:
        raise ValueError(f"duplicate feature names: {dupes}")
    missing = [x for x in names if x not in vector.values]
    if missing:
        raise KeyError(f"unknown features {missing}; available: {list(vector.values)}")
    reps = None
    if vector.replicates is not None:
        cols = [list(vector.values).index(x) for x in names]
        reps = vector.replicates[:, cols]
    return FeatureVector(
        OrderedDict((x, vector.values[x]) for x in names),
        problem=vector.problem,
        n_samples=vector.n_samples,
        n_reps=vector.n_reps,
        replicates=reps,
    )


def resolve_subset(subset):
    """Feature names for a subset spec: ``"all"``, ``"selected-9"`` or a list."""
    if subset in (None, "all"):
        return list(FEATURE_NAMES)
    if subset in ("selected", "selected-9"):
        return list(SELECTED_FEATURES)
    if isinstance(subset, str):
        raise ValidationError(f"unknown feature subset {subset!r}")
    names = list(subset)
    unknown = [x for x in names if x not in FEATURE_NAMES]
    if unknown:
        raise ValidationError(f"unknown features {unknown}")
    return names


def minmax_normalize(matrix):
    """Column-wise min-max scaling to [0, 1]; constant columns map to 0."""
    m = np.asarray(matrix, dtype=float)
    lo, hi = m.min(axis=0), m.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return np.clip((m - lo) / span, 0.0, 1.0)


# --------------------------------------------------------------------------
# features CSV


@dataclass
class FeatureTable:
    """Feature matrix indexed by problem, as read from / written to CSV."""

    problems: list
    names: list
    matrix: np.ndarray
    n_samples: int = None
    n_reps: int = None

    def row(self, pid):
        return self.matrix[self.problems.index(pid)]

    def subset(self, names):
        cols = [self.names.index(x) for x in names]
        return FeatureTable(list(self.problems), list(names), self.matrix[:, cols], self.n_samples, self.n_reps)

    @classmethod
    def from_vectors(cls, vectors, names=None):
        names = list(names or vectors[0].names)
        matrix = np.array([[v.values[x] for x in names] for v in vectors], dtype=float)
        return cls([v.problem for v in vectors], names, matrix, vectors[0].n_samples, vectors[0].n_reps)


def write_features_csv(path, table, meta=None):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.writelines(_comment_lines(meta))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fid", "iid", "dim", "n_samples", "n_reps", *table.names])
        for pid, row in zip(table.problems, table.matrix):
            w.writerow([pid.fid, pid.iid, pid.dim, table.n_samples, table.n_reps, *(repr(float(v)) for v in row)])


def read_features_csv(path):
    problems, rows = [], []
    n_samples = n_reps = None
    with open(path, encoding="utf-8", newline="") as fh:
        lines = _data_lines(fh)
        try:
            lineno, header = next(lines)
        except StopIteration:
            raise ParseError("missing header row", line=1) from None
        cols = next(csv.reader([header]))
        if cols[:5] != ["fid", "iid", "dim", "n_samples", "n_reps"]:
            raise ParseError("features CSV must start with fid,iid,dim,n_samples,n_reps", line=lineno)
        names = cols[5:]
        for lineno, line in lines:
            row = next(csv.reader([line]))
            if len(row) != len(cols):
                raise ParseError(f"expected {len(cols)} fields, got {len(row)}", line=lineno)
            try:
                problems.append(ProblemId(int(row[0]), int(row[1]), int(row[2])))
                n_samples, n_reps = int(row[3]), int(row[4])
                values = [float(v) for v in row[5:]]
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
            if not all(math.isfinite(v) for v in values):
                raise ValidationError(f"line {lineno}: non-finite feature value")
            rows.append(values)
    matrix = np.array(rows, dtype=float).reshape(len(rows), len(names))
    return FeatureTable(problems, names, matrix, n_samples, n_reps)
