"""Multi-target CART regression trees and bagged forests.

A node's split minimises, over every feature and every midpoint between
consecutive distinct sorted values, the summed squared deviation of all
targets around the child means. Two weightings of the children are offered:

* ``count_weighted`` -- ``(m1 * SSE1 + m2 * SSE2) / (m1 + m2)``
* ``classic``        -- ``SSE1 + SSE2`` (standard CART)

Single-target trees are the ``n = 1`` case of the same code.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import kernels
from .model_core import ModelFormatError, ModelMetadata, Regressor, register_family

WEIGHTINGS = ("count_weighted", "classic")
# Candidates whose cost is within this fraction of the parent SSE of the best
# one count as tied; ties go to the lower feature index, then lower threshold.
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class TreeHyperparams:
    max_depth: int = 7
    min_samples_split: int = 105
    min_samples_leaf: int = 28
    split_weighting: str = "count_weighted"

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.split_weighting not in WEIGHTINGS:
            raise ValueError(f"split_weighting must be one of {WEIGHTINGS}")
        if self.min_samples_split < 2 * self.min_samples_leaf:
            warnings.warn(
                "min_samples_split < 2 * min_samples_leaf: nodes near the split "
                "limit can never be split",
                stacklevel=3,
            )


@dataclass(frozen=True)
class ForestHyperparams:
    tree_count: int = 150
    tree: TreeHyperparams = field(default_factory=lambda: TreeHyperparams(7, 120, 30))
    seed: int = 0
    max_features: Optional[int] = None

    def __post_init__(self):
        if self.tree_count < 1:
            raise ValueError("tree_count must be >= 1")
        if self.max_features is not None and self.max_features < 1:
            raise ValueError("max_features must be >= 1")


class Split(NamedTuple):
    feature: int
    threshold: float
    cost: float


def _as_2d(Y):
    Y = np.asarray(Y, dtype=np.float64)
    return Y[:, None] if Y.ndim == 1 else Y


def node_sse(Y) -> float:
    """Sum over rows and targets of squared deviations from the column means."""
    Y = _as_2d(Y)
    if Y.shape[0] == 0:
        raise ValueError("node_sse of an empty node")
    return float(((Y - Y.mean(axis=0)) ** 2).sum())


def split_cost(left, right, weighting: str = "count_weighted") -> float:
    left, right = _as_2d(left), _as_2d(right)
    m1, m2 = left.shape[0], right.shape[0]
    if m1 == 0 or m2 == 0:
        raise ValueError("split_cost needs two non-empty sides")
    s1, s2 = node_sse(left), node_sse(right)
    if weighting == "count_weighted":
        return (m1 * s1 + m2 * s2) / (m1 + m2)
    if weighting == "classic":
        return s1 + s2
    raise ValueError(f"weighting must be one of {WEIGHTINGS}, got {weighting!r}")


def _midpoint(a, b):
    mid = 0.5 * (a + b)
    # Rounding can land on b, which would then route left under "<=".
    return a if mid >= b else mid


def best_split(X, Y, hp: TreeHyperparams, features=None) -> Optional[Split]:
    """Cost-minimising admissible split of one node, or ``None``.

    ``None`` when the node is below ``min_samples_split``, no cut leaves
    ``min_samples_leaf`` rows on both sides, or no cut strictly lowers the
    cost below the unsplit node SSE.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = _as_2d(Y)
    rows = X.shape[0]
    if rows < hp.min_samples_split or rows < 2 * hp.min_samples_leaf:
        return None
    parent = node_sse(Y)
    if parent <= 0.0:
        return None
    weighted = hp.split_weighting == "count_weighted"
    yc = Y - Y.mean(axis=0)
    features = range(X.shape[1]) if features is None else sorted(features)

    scans = []
    jmin = math.inf
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        costs = kernels.split_costs(xs, yc[order], hp.min_samples_leaf, weighted)
        if costs.size:
            jmin = min(jmin, float(costs.min()))
        scans.append((f, xs, costs))
    if not math.isfinite(jmin):
        return None

    tol = TIE_RTOL * parent
    for f, xs, costs in scans:
        hits = np.flatnonzero(costs <= jmin + tol)
        if hits.size:
            i = int(hits[0])
            thr = float(_midpoint(xs[i], xs[i + 1]))
            break
    left = X[:, f] <= thr
    cost = split_cost(Y[left], Y[~left], hp.split_weighting)
    if not cost < parent - tol:
        return None
    return Split(int(f), thr, cost)


def _leaf_value(Ysub):
    # fsum keeps leaf means independent of training-row order.
    return np.array([math.fsum(Ysub[:, p].tolist()) for p in range(Ysub.shape[1])]) / Ysub.shape[0]


@register_family
class TreeModel(Regressor):
    """Fitted tree as flat preorder node arrays (``feature == -1`` marks a leaf)."""

    family = "tree"

    def __init__(self, feature, threshold, left, right, value, count, input_count, metadata=None):
        value = np.asarray(value, dtype=np.float64)
        super().__init__(input_count, value.shape[1], metadata)
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = value
        self.count = np.asarray(count, dtype=np.int64)
        for a in (self.feature, self.threshold, self.left, self.right, self.value, self.count):
            a.flags.writeable = False

    @property
    def node_count(self) -> int:
        return int(self.feature.size)

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.feature < 0)

    @property
    def depth(self) -> int:
        depth = np.zeros(self.node_count, dtype=np.int64)
        for i in range(self.node_count):  # preorder: parents come first
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X) -> np.ndarray:
        """Leaf index for every row."""
        return kernels.route(np.asarray(X, dtype=np.float64), self.feature, self.threshold,
                             self.left, self.right)

    def _predict(self, X):
        return self.value[self.apply(X)]

    def _write_payload(self, w):
        _write_tree(w, self)

    @classmethod
    def _read_payload(cls, r, meta, k, n):
        return _read_tree(r, k, n, meta)


def _write_tree(w, t: TreeModel):
    w.u32(t.node_count)
    for i in range(t.node_count):
        internal = t.feature[i] >= 0
        w.u8(1 if internal else 0)
        w.u32(int(t.feature[i]) if internal else 0)
        w.f64(float(t.threshold[i]))
        w.u32(int(t.count[i]))
        w.array(t.value[i])


def _read_tree(r, k, n, meta=None):
    n_nodes = r.u32()
    if n_nodes == 0:
        raise ModelFormatError("tree has no nodes", r.offset)
    start = r.offset
    feature, threshold, count, values = [], [], [], []
    for _ in range(n_nodes):
        tag = r.u8()
        if tag not in (0, 1):
            raise ModelFormatError(f"bad node tag {tag}", r.offset - 1)
        f = r.u32()
        if tag == 1 and f >= k:
            raise ModelFormatError(f"split feature {f} out of range", r.offset - 4)
        feature.append(f if tag == 1 else -1)
        threshold.append(r.f64())
        count.append(r.u32())
        values.append(r.array(n))
    left = np.full(n_nodes, -1, dtype=np.int64)
    right = np.full(n_nodes, -1, dtype=np.int64)
    # Rebuild child links from preorder: the left child directly follows its parent.
    stack = []
    for i in range(n_nodes):
        if stack:
            parent = stack[-1]
            if left[parent] < 0:
                left[parent] = i
            else:
                right[parent] = i
                stack.pop()
        if feature[i] >= 0:
            stack.append(i)
    if stack:
        raise ModelFormatError("tree node records end mid-subtree", start)
    return TreeModel(feature, threshold, left, right, np.array(values).reshape(n_nodes, n),
                     count, k, meta)


class _Builder:
    def __init__(self, X, Y, hp, max_features=None, rng=None):
        self.X, self.Y, self.hp = X, Y, hp
        self.max_features, self.rng = max_features, rng
        self.feature, self.threshold, self.left, self.right = [], [], [], []
        self.value, self.count = [], []

    def grow(self, rows, depth):
        nid = len(self.feature)
        Ysub = self.Y[rows]
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(_leaf_value(Ysub))
        self.count.append(rows.size)
        if depth >= self.hp.max_depth or rows.size < self.hp.min_samples_split:
            return nid
        features = None
        k = self.X.shape[1]
        if self.max_features is not None and self.max_features < k:
            features = self.rng.choice(k, self.max_features, replace=False)
        split = best_split(self.X[rows], Ysub, self.hp, features)
        if split is None:
            return nid
        mask = self.X[rows, split.feature] <= split.threshold
        self.feature[nid] = split.feature
        self.threshold[nid] = split.threshold
        self.left[nid] = self.grow(rows[mask], depth + 1)
        self.right[nid] = self.grow(rows[~mask], depth + 1)
        return nid


def _tree_hp_dict(hp: TreeHyperparams):
    return asdict(hp)


def fit_tree(X, Y, hp: TreeHyperparams = TreeHyperparams(), *, max_features=None, rng=None) -> TreeModel:
    X = np.asarray(X, dtype=np.float64)
    Y = _as_2d(Y)
    if X.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise ValueError(f"shape mismatch: X {X.shape}, Y {Y.shape}")
    if X.shape[0] < 1:
        raise ValueError("cannot fit a tree on zero rows")
    b = _Builder(X, Y, hp, max_features, rng)
    b.grow(np.arange(X.shape[0]), 0)
    meta = ModelMetadata("tree", _tree_hp_dict(hp))
    return TreeModel(b.feature, b.threshold, b.left, b.right, np.array(b.value), b.count,
                     X.shape[1], meta)


def predict_tree(model: TreeModel, x) -> np.ndarray:
    return model.predict_row(x)


def tree_seed(seed: int, index: int) -> np.random.SeedSequence:
    """Per-tree stream: numpy's SeedSequence hash of ``(seed, index)``."""
    return np.random.SeedSequence([int(seed), int(index)])


@register_family
class ForestModel(Regressor):
    family = "forest"

    def __init__(self, trees, metadata=None):
        if not trees:
            raise ValueError("a forest needs at least one tree")
        super().__init__(trees[0].input_count, trees[0].target_count, metadata)
        self.trees = tuple(trees)

    def _predict(self, X):
        acc = self.trees[0]._predict(X).copy()
        for t in self.trees[1:]:
            acc += t._predict(X)
        return acc / len(self.trees)

    def _write_payload(self, w):
        w.u32(len(self.trees))
        for t in self.trees:
            _write_tree(w, t)

    @classmethod
    def _read_payload(cls, r, meta, k, n):
        count = r.u32()
        if count == 0:
            raise ModelFormatError("forest has no trees", r.offset)
        return cls([_read_tree(r, k, n) for _ in range(count)], meta)


def fit_forest(X, Y, hp: ForestHyperparams = ForestHyperparams(), *, n_jobs: int = 1,
               bootstrap: bool = True) -> ForestModel:
    """Bagged trees, each on an m-row bootstrap drawn from its own seeded stream.

    ``bootstrap=False`` fits every member on the data as given (test hook).
    Results do not depend on ``n_jobs``.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = _as_2d(Y)
    if X.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise ValueError(f"shape mismatch: X {X.shape}, Y {Y.shape}")
    m = X.shape[0]
    if m < 1:
        raise ValueError("cannot fit a forest on zero rows")

    def member(i):
        rng = np.random.default_rng(tree_seed(hp.seed, i))
        idx = rng.integers(0, m, size=m) if bootstrap else np.arange(m)
        return fit_tree(X[idx], Y[idx], hp.tree, max_features=hp.max_features, rng=rng)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            trees = list(pool.map(member, range(hp.tree_count)))
    else:
        trees = [member(i) for i in range(hp.tree_count)]
    params = {"tree_count": hp.tree_count, **_tree_hp_dict(hp.tree)}
    if hp.max_features is not None:
        params["max_features"] = hp.max_features
    return ForestModel(trees, ModelMetadata("forest", params, seed=hp.seed))


def predict_forest(model: ForestModel, x) -> np.ndarray:
    return model.predict_row(x)
