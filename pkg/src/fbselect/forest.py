"""Random forest regression built from variance-reduction (CART) trees.

Trees are stored as flat arrays (``feature``, ``threshold``, ``left``,
``right``, ``value``, ``count``); ``feature == -1`` marks a leaf. Splits pick
the candidate with the largest weighted variance reduction over midpoints
between consecutive distinct values. Gains within a relative tolerance of the
best are ties, resolved by feature rank then lower threshold, so split choice
is stable under shifting/scaling the targets. The rank is the column index
unless feature names are given, in which case it is the names' sorted order;
that keeps tie resolution unchanged when columns and names are permuted
together.
"""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

# gains this close to the best (relative to node SSE) count as ties
_TIE_RTOL = 1e-10
FORMAT_VERSION = 1


@dataclass
class ForestParams:
    n_trees: int = 1000
    max_features: float = 1.0
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    max_depth: int = None
    bootstrap: bool = True

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if not 0 < self.max_features <= 1:
            raise ValueError("max_features must lie in (0, 1]")
        if self.min_samples_split < 2 or self.min_samples_leaf < 1:
            raise ValueError("min_samples_split >= 2 and min_samples_leaf >= 1 required")


@dataclass
class TreeNode:
    """Readable view of one node; ``feature_index is None`` for leaves."""

    feature_index: int = None
    threshold: float = None
    left: "TreeNode" = None
    right: "TreeNode" = None
    mean_target: float = None
    count: int = None


class Tree:
    def __init__(self, feature, threshold, left, right, value, count):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=float)
        self.count = np.asarray(count, dtype=np.int64)

    @property
    def n_nodes(self):
        return len(self.feature)

    def apply(self, X):
        """Leaf index reached by every row of X."""
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.nonzero(active)[0]
            nd = node[rows]
            go_left = X[rows, self.feature[nd]] <= self.threshold[nd]
            node[rows] = np.where(go_left, self.left[nd], self.right[nd])
            active[rows] = self.feature[node[rows]] >= 0
        return node

    def predict(self, X):
        return self.value[self.apply(X)]

    def root(self, i=0):
        if self.feature[i] < 0:
            return TreeNode(mean_target=float(self.value[i]), count=int(self.count[i]))
        return TreeNode(
            feature_index=int(self.feature[i]),
            threshold=float(self.threshold[i]),
            left=self.root(int(self.left[i])),
            right=self.root(int(self.right[i])),
        )

    def to_dict(self):
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "count": self.count.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["feature"], d["threshold"], d["left"], d["right"], d["value"], d["count"])


def _best_split(X, y, feats, min_leaf, rank=None):
    """Best (feature, threshold, gain) at a node, or None if nothing helps."""
    m = len(y)
    Xn = X[:, feats]
    order = np.argsort(Xn, axis=0, kind="stable")
    xs = np.take_along_axis(Xn, order, axis=0)
    yc = y - y.mean()
    ys = yc[order]
    total_sse = float(np.dot(yc, yc))
    if total_sse <= 0:
        return None

    cs = np.cumsum(ys, axis=0)[:-1]
    cs2 = np.cumsum(ys * ys, axis=0)[:-1]
    n_left = np.arange(1, m)[:, None].astype(float)
    n_right = m - n_left
    tot, tot2 = cs[-1] + ys[-1], cs2[-1] + ys[-1] ** 2
    sse_left = cs2 - cs * cs / n_left
    sse_right = (tot2 - cs2) - (tot - cs) ** 2 / n_right
    gain = total_sse - sse_left - sse_right

    valid = xs[1:] > xs[:-1]
    if min_leaf > 1:
        sizes = np.arange(1, m)
        valid &= ((sizes >= min_leaf) & (m - sizes >= min_leaf))[:, None]
    gain = np.where(valid, gain, -np.inf)
    best = gain.max()
    tol = _TIE_RTOL * total_sse
    if not np.isfinite(best) or best <= tol:
        return None
    # ties go to the lowest-ranked feature, then the lowest threshold
    ks, js = np.nonzero((gain >= best - tol).T)
    r = feats[ks] if rank is None else rank[feats[ks]]
    first = np.lexsort((js, r))[0]
    k, j = int(ks[first]), int(js[first])
    lo, hi = xs[j, k], xs[j + 1, k]
    thr = lo + (hi - lo) / 2.0
    if not lo <= thr < hi:
        thr = lo
    return int(feats[k]), float(thr), float(gain[j, k])


def build_tree(X, y, params, rng, rank=None):
    """Grow one tree on (X, y); ``rng`` drives feature subsampling only."""
    n, p = X.shape
    k_feats = max(1, math.ceil(params.max_features * p - 1e-12))
    feature, threshold, left, right, value, count = [], [], [], [], [], []

    def new_node():
        for arr, v in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1), (value, 0.0), (count, 0)):
            arr.append(v)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(n), 0)]
    while stack:
        node, idx, depth = stack.pop()
        yi = y[idx]
        value[node] = float(yi.mean())
        count[node] = len(idx)
        if len(idx) < params.min_samples_split or (params.max_depth is not None and depth >= params.max_depth):
            continue
        if k_feats < p:
            feats = np.sort(rng.choice(p, size=k_feats, replace=False))
        else:
            feats = np.arange(p)
        split = _best_split(X[idx], yi, feats, params.min_samples_leaf, rank)
        if split is None:
            continue
        f, thr, _ = split
        go_left = X[idx, f] <= thr
        li, ri = new_node(), new_node()
        feature[node], threshold[node], left[node], right[node] = f, thr, li, ri
        # right pushed first so the left subtree is numbered first
        stack.append((ri, idx[~go_left], depth + 1))
        stack.append((li, idx[go_left], depth + 1))
    return Tree(feature, threshold, left, right, value, count)


@dataclass
class Forest:
    trees: list
    params: ForestParams
    feature_names: list = field(default_factory=list)
    target_scale: str = "unscaled"

    @property
    def n_features(self):
        return len(self.feature_names)

    def predict(self, X):
        return predict(self, X)

    def to_dict(self):
        return {
            "format": "fbselect-forest",
            "version": FORMAT_VERSION,
            "params": asdict(self.params),
            "feature_names": list(self.feature_names),
            "target_scale": self.target_scale,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != "fbselect-forest" or d.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported forest dump (format={d.get('format')}, version={d.get('version')})")
        return cls(
            [Tree.from_dict(t) for t in d["trees"]],
            ForestParams(**d["params"]),
            list(d["feature_names"]),
            d["target_scale"],
        )

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _check_finite(X, y):
    bad = ~np.isfinite(X)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise ValueError(f"non-finite feature value at row {r}, column {c}")
    bad_y = ~np.isfinite(y)
    if bad_y.any():
        raise ValueError(f"non-finite target at row {int(np.argmax(bad_y))}")


def tree_seed(seed, t):
    return np.random.SeedSequence(seed, spawn_key=(t,))


def fit(X, y, params=None, seed=0, feature_names=None, target_scale="unscaled"):
    """Fit a forest; tree ``t`` uses a generator derived from ``(seed, t)``."""
    params = params or ForestParams()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError(f"X {X.shape} and y {y.shape} disagree")
    if len(X) < 2:
        raise ValueError("need at least two training rows")
    _check_finite(X, y)
    if target_scale not in ("unscaled", "log10"):
        raise ValueError(f"target_scale must be 'unscaled' or 'log10', got {target_scale!r}")
    if feature_names is None:
        names, rank = [f"x{i}" for i in range(X.shape[1])], None
    else:
        names = list(feature_names)
        if len(names) != X.shape[1] or len(set(names)) != len(names):
            raise ValueError("feature_names must be unique and match the columns of X")
        rank = np.empty(len(names), dtype=np.int64)
        rank[np.argsort(names, kind="stable")] = np.arange(len(names))
    n = len(X)
    trees = []
    for t in range(params.n_trees):
        rng = np.random.default_rng(tree_seed(seed, t))
        idx = rng.integers(0, n, size=n) if params.bootstrap else np.arange(n)
        trees.append(build_tree(X[idx], y[idx], params, rng, rank))
    return Forest(trees, params, names, target_scale)


def predict(forest, X):
    """Mean of per-tree leaf values. Accepts one vector or a row matrix."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.shape[1] != forest.n_features:
        raise ValueError(f"expected {forest.n_features} features, got {X.shape[1]}")
    per_tree = np.array([tree.predict(X) for tree in forest.trees])
    # rounding in the mean must not leave the hull of the tree outputs
    out = np.clip(per_tree.mean(axis=0), per_tree.min(axis=0), per_tree.max(axis=0))
    return float(out[0]) if single else out


def rmse(pred, truth):
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape or pred.size == 0:
        raise ValueError(f"rmse needs equal non-empty shapes, got {pred.shape} and {truth.shape}")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))
