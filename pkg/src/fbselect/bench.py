"""BBOB-style noiseless problem suite.

Ten functions covering the usual difficulty classes (separable, ill-conditioned,
multimodal, weakly structured). Function ids follow the BBOB numbering so
results line up with the familiar F1..F24 labels. Instances are built from a
rotation + translation + objective offset drawn from a generator seeded by a
stable hash of ``(fid, iid, dim)``; the COCO oscillation/asymmetry transforms
are not applied.

The box ``[-5, 5]^d`` is the search domain, but every function can be
evaluated anywhere in R^d.
"""

import csv
import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .errors import CatalogError, ParseError, ValidationError
from .seeding import stable_hash

LOWER, UPPER = -5.0, 5.0
PRECISION_FLOOR = 1e-12
PERFORMANCE_COLUMNS = ("fid", "iid", "dim", "algo_id", "run", "budget", "precision")


@dataclass(frozen=True, order=True)
class ProblemId:
    fid: int
    iid: int
    dim: int

    def __post_init__(self):
        if self.fid < 1:
            raise ValueError(f"fid must be >= 1, got {self.fid}")
        if self.iid < 1:
            raise ValueError(f"iid must be >= 1, got {self.iid}")
        if self.dim < 2:
            raise ValueError(f"dim must be >= 2, got {self.dim}")

    @property
    def key(self):
        return (self.fid, self.iid)

    def __str__(self):
        return f"f{self.fid}_i{self.iid}_d{self.dim}"


@dataclass(frozen=True)
class InstanceTransform:
    rotation: np.ndarray
    shift: np.ndarray
    f_offset: float


# --------------------------------------------------------------------------
# raw functions: g(z, params) >= 0 with g == 0 at the optimum; z is (m, d)


def _powers(d, top):
    return np.arange(d) / (d - 1) * top


def _sphere(z, p):
    return np.sum(z * z, axis=1)


def _ellipsoid(z, p):
    return (10.0 ** _powers(z.shape[1], 6.0) * z * z).sum(axis=1)


def _rastrigin(z, p):
    d = z.shape[1]
    return 10.0 * (d - np.cos(2 * np.pi * z).sum(axis=1)) + (z * z).sum(axis=1)


def _linear_slope(x, p):
    x_opt = p["x_opt"]
    s = np.sign(x_opt) * 10.0 ** _powers(x.shape[1], 1.0)
    # beyond the optimal corner the slope is flat, so the optimum is global on R^d
    z = np.where(x * x_opt < 25.0, x, x_opt)
    return (5.0 * np.abs(s) - s * z).sum(axis=1)


def _attractive_sector(z, p):
    s = np.where(z * p["sector"] > 0, 100.0, 1.0)
    return np.sum((s * z) ** 2, axis=1) ** 0.9


def _rosenbrock(z, p):
    z = p["scale"] * z + 1.0
    a, b = z[:, :-1], z[:, 1:]
    return (100.0 * (a * a - b) ** 2 + (a - 1.0) ** 2).sum(axis=1)


def _sharp_ridge(z, p):
    return z[:, 0] ** 2 + 100.0 * np.sqrt((z[:, 1:] ** 2).sum(axis=1))


def _different_powers(z, p):
    return np.sqrt((np.abs(z) ** (2.0 + _powers(z.shape[1], 4.0))).sum(axis=1))


def _schaffers_f7(z, p):
    s = np.sqrt(z[:, :-1] ** 2 + z[:, 1:] ** 2)
    r = np.sqrt(s)
    return np.mean(r + r * np.sin(50.0 * s**0.2) ** 2, axis=1) ** 2


def _gallagher(x, p):
    # x is untransformed here: peaks live in x-space, rotation shapes them
    diff = x[:, None, :] - p["peaks"][None, :, :]
    rot = diff @ p["rotation"].T
    q = np.sum(p["conditioning"][None] * rot * rot, axis=2)
    best = np.max(p["weights"][None] * np.exp(-q / (2.0 * x.shape[1])), axis=1)
    return (10.0 - best) ** 2


def _gallagher_params(rng, dim, shift, rotation):
    n_peaks = 101
    alphas = 1000.0 ** (2.0 * np.arange(n_peaks - 1) / (n_peaks - 2))
    alphas = np.concatenate([[1000.0], rng.permutation(alphas)])
    conditioning = np.empty((n_peaks, dim))
    for i, a in enumerate(alphas):
        conditioning[i] = rng.permutation(a ** (np.arange(dim) / (dim - 1))) / a**0.25
    peaks = np.vstack([shift, rng.uniform(-4.9, 4.9, size=(n_peaks - 1, dim))])
    weights = np.concatenate([[10.0], 1.1 + 8.0 * np.arange(n_peaks - 1) / (n_peaks - 2)])
    return {"peaks": peaks, "conditioning": conditioning, "weights": weights, "rotation": rotation}


@dataclass(frozen=True)
class _Spec:
    name: str
    fn: object
    rotated: bool
    # raw functions that take x directly and handle the transform themselves
    raw_x: bool = False


CATALOG = OrderedDict(
    [
        (1, _Spec("sphere", _sphere, False)),
        (2, _Spec("ellipsoid", _ellipsoid, False)),
        (3, _Spec("rastrigin", _rastrigin, False)),
        (5, _Spec("linear_slope", _linear_slope, False, raw_x=True)),
        (6, _Spec("attractive_sector", _attractive_sector, True)),
        (9, _Spec("rosenbrock_rotated", _rosenbrock, True)),
        (13, _Spec("sharp_ridge", _sharp_ridge, True)),
        (14, _Spec("different_powers", _different_powers, True)),
        (17, _Spec("schaffers_f7", _schaffers_f7, True)),
        (21, _Spec("gallagher_101", _gallagher, True, raw_x=True)),
    ]
)
FUNCTION_IDS = tuple(CATALOG)


def function_name(fid):
    if fid not in CATALOG:
        raise CatalogError(f"unknown function id {fid}; catalog has {list(CATALOG)}")
    return CATALOG[fid].name


class ProblemInstance:
    """A seeded instance of a catalog function with an evaluation counter.

    Not safe to share between workers: ``eval_count`` is mutable. Use
    :meth:`clone` to get an independent copy with a fresh counter.
    """

    def __init__(self, pid, transform, x_opt, params):
        self.id = pid
        self.transform = transform
        self.x_opt = x_opt
        self.f_opt = transform.f_offset
        self._params = params
        self._spec = CATALOG[pid.fid]
        self.eval_count = 0

    @property
    def dim(self):
        return self.id.dim

    @property
    def name(self):
        return self._spec.name

    @property
    def lower(self):
        return np.full(self.dim, LOWER)

    @property
    def upper(self):
        return np.full(self.dim, UPPER)

    def clone(self):
        return ProblemInstance(self.id, self.transform, self.x_opt, self._params)

    def _raw(self, X):
        if self._spec.raw_x:
            return self._spec.fn(X, self._params)
        z = (X - self.transform.shift) @ self.transform.rotation.T
        return self._spec.fn(z, self._params)

    def evaluate_many(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise ValueError(f"expected points of shape (m, {self.dim}), got {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("non-finite coordinate in evaluation point")
        self.eval_count += X.shape[0]
        return self._raw(X) + self.f_opt

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"expected a vector of length {self.dim}, got shape {x.shape}")
        return float(self.evaluate_many(x[None, :])[0])

    __call__ = evaluate

    def precision(self, best_fitness):
        return precision(self, best_fitness)

    def __repr__(self):
        return f"ProblemInstance({self.id}, {self.name}, evals={self.eval_count})"


def _random_rotation(rng, dim):
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def make_problem(fid, iid, dim=5):
    """Build instance ``iid`` of function ``fid`` in dimension ``dim``.

    Pure: the same triple always yields a bit-identical transform.
    """
    if fid not in CATALOG:
        raise CatalogError(f"unknown function id {fid}; catalog has {list(CATALOG)}")
    pid = ProblemId(int(fid), int(iid), int(dim))
    spec = CATALOG[fid]
    rng = np.random.default_rng(stable_hash("bench", pid.fid, pid.iid, pid.dim))
    rotation = _random_rotation(rng, dim)
    shift = rng.uniform(-4.0, 4.0, size=dim)
    f_offset = float(rng.uniform(-100.0, 100.0))
    if not spec.rotated:
        rotation = np.eye(dim)
    transform = InstanceTransform(rotation, shift, f_offset)

    x_opt = shift.copy()
    params = {}
    if fid == 5:
        x_opt = np.where(shift < 0, LOWER, UPPER)
        params["x_opt"] = x_opt
    elif fid == 6:
        params["sector"] = np.sign(shift)
    elif fid == 9:
        params["scale"] = max(1.0, math.sqrt(dim) / 8.0)
    elif fid == 21:
        params = _gallagher_params(rng, dim, shift, rotation)
    return ProblemInstance(pid, transform, x_opt, params)


def evaluate(problem, x):
    return problem.evaluate(x)


def precision(problem, best_fitness):
    """Target precision ``best - f_opt``, clamped below at ``PRECISION_FLOOR``."""
    return max(float(best_fitness) - problem.f_opt, PRECISION_FLOOR)


# --------------------------------------------------------------------------
# performance data


@dataclass(frozen=True)
class PerformanceRecord:
    """Fixed-budget result of one algorithm on one problem, over replicated runs."""

    problem: ProblemId
    algo_id: str
    precisions: tuple
    budget: int = None
    median_precision: float = field(init=False)

    def __post_init__(self):
        if len(self.precisions) == 0:
            raise ValueError("a performance record needs at least one run")
        object.__setattr__(self, "median_precision", float(np.median(self.precisions)))

    @property
    def runs(self):
        return len(self.precisions)


def _comment_lines(meta):
    return [f"# {k}={v}\n" for k, v in (meta or {}).items()]


def _data_lines(fh):
    """Yield (line_number, text) skipping ``#`` comments and blank lines."""
    for lineno, line in enumerate(fh, start=1):
        if line.startswith("#") or not line.strip():
            continue
        yield lineno, line


def write_performance_csv(path, records, meta=None):
    """Write one row per run in the performance CSV schema."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.writelines(_comment_lines(meta))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PERFORMANCE_COLUMNS)
        for rec in records:
            p = rec.problem
            for run, value in enumerate(rec.precisions):
                w.writerow([p.fid, p.iid, p.dim, rec.algo_id, run, rec.budget, repr(float(value))])


def write_median_csv(path, records, meta=None):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.writelines(_comment_lines(meta))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fid", "iid", "dim", "algo_id", "runs", "budget", "median_precision"])
        for rec in records:
            p = rec.problem
            w.writerow([p.fid, p.iid, p.dim, rec.algo_id, rec.runs, rec.budget, repr(rec.median_precision)])


def ingest_performance(path):
    """Read a per-run performance CSV into records grouped by (fid, iid, dim, algo).

    Lines starting with ``#`` are metadata and skipped. Records come back in
    order of first appearance; runs within a record in file order.
    """
    groups = OrderedDict()
    with open(path, encoding="utf-8", newline="") as fh:
        lines = _data_lines(fh)
        try:
            lineno, header = next(lines)
        except StopIteration:
            raise ParseError("missing header row", line=1) from None
        cols = next(csv.reader([header]))
        if tuple(c.strip() for c in cols) != PERFORMANCE_COLUMNS:
            raise ParseError(f"expected header {','.join(PERFORMANCE_COLUMNS)}, got {header.strip()}", line=lineno)
        for lineno, line in lines:
            row = next(csv.reader([line]))
            if len(row) != len(PERFORMANCE_COLUMNS):
                raise ParseError(f"expected {len(PERFORMANCE_COLUMNS)} fields, got {len(row)}", line=lineno)
            try:
                fid, iid, dim = int(row[0]), int(row[1]), int(row[2])
                algo = row[3].strip()
                run, budget = int(row[4]), int(row[5])
                value = float(row[6])
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
            if not algo:
                raise ParseError("empty algo_id", line=lineno)
            if not math.isfinite(value) or value <= 0:
                raise ValidationError(f"line {lineno}: precision must be positive and finite, got {row[6]}")
            try:
                pid = ProblemId(fid, iid, dim)
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
            key = (pid, algo)
            entry = groups.setdefault(key, {"budget": budget, "runs": []})
            if entry["budget"] != budget:
                raise ValidationError(f"line {lineno}: budget {budget} differs from earlier rows of {pid} {algo}")
            entry["runs"].append((run, value))
    return [
        PerformanceRecord(pid, algo, tuple(v for _, v in e["runs"]), e["budget"])
        for (pid, algo), e in groups.items()
    ]
