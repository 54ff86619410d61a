"""Gini decision trees and bootstrap random forests."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, EmptyDatasetError
from ..tree import FlatTree, TreeBuffer, midpoint

_CELL_BUDGET = 6_000_000


@dataclass(frozen=True)
class DTConfig:
    max_depth: int | None = None
    min_samples_split: int = 2
    criterion: str = "gini"

    def __post_init__(self):
        if self.min_samples_split < 2:
            raise ConfigError("must be >= 2", path="dt.min_samples_split")
        if self.max_depth is not None and self.max_depth < 1:
            raise ConfigError("must be >= 1", path="dt.max_depth")
        if self.criterion != "gini":
            raise ConfigError("only 'gini' is supported", path="dt.criterion")


@dataclass(frozen=True)
class RFConfig:
    n_trees: int = 100
    features_per_split: int | None = None  # None -> ceil(sqrt(d))
    bootstrap: bool = True
    seed: int = 0
    max_depth: int | None = None
    min_samples_split: int = 2
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigError("must be >= 1", path="rf.n_trees")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise ConfigError("must be >= 1", path="rf.features_per_split")

    def resolved_features(self, d: int) -> int:
        m = self.features_per_split or math.ceil(math.sqrt(d))
        if not 1 <= m <= d:
            raise ConfigError(f"must be in [1, {d}]", path="rf.features_per_split")
        return m


def gini_split_scores(v: np.ndarray, ys: np.ndarray, n_classes: int) -> np.ndarray:
    """Split scores for every position of presorted columns.

    ``v`` and ``ys`` are ``(n, f)`` sorted values and their labels. Entry
    ``[i, j]`` scores sending the first ``i + 1`` rows left:
    ``sum(cL^2)/nL + sum(cR^2)/nR``, which is larger exactly when the
    weighted child Gini impurity is smaller. Positions between equal values
    score ``-inf``.
    """
    n = len(v)
    onehot = ys[..., None] == np.arange(n_classes)
    left = np.cumsum(onehot, axis=0, dtype=np.int64)[:-1]
    right = left[-1:] + onehot[-1:] - left  # totals minus left counts
    n_left = np.arange(1, n, dtype=np.int64)[:, None]
    score = (left * left).sum(-1) / n_left + (right * right).sum(-1) / (n - n_left)
    return np.where(v[:-1] < v[1:], score, -np.inf)


def _best_gini_split(x: np.ndarray, y: np.ndarray, features: np.ndarray, n_classes: int):
    n = len(x)
    best = (-np.inf, -1, 0.0)
    step = max(1, _CELL_BUDGET // (n * n_classes))
    for s in range(0, len(features), step):
        feats = features[s:s + step]
        block = x[:, feats]
        order = np.argsort(block, axis=0, kind="stable")
        v = np.take_along_axis(block, order, axis=0)
        scores = gini_split_scores(v, y[order], n_classes)
        flat = int(np.argmax(scores.T))  # ties -> lowest feature, then lowest threshold
        fj, pos = divmod(flat, n - 1)
        if scores[pos, fj] > best[0]:
            best = (scores[pos, fj], int(feats[fj]), midpoint(v[pos, fj], v[pos + 1, fj]))
    return best


def grow_gini_tree(
    x: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    max_depth: int | None = None,
    min_samples_split: int = 2,
    features_per_split: int | None = None,
    rng: np.random.Generator | None = None,
) -> FlatTree:
    """Greedy CART growth; leaves hold class fractions."""
    if len(x) == 0:
        raise EmptyDatasetError("cannot fit a tree on zero rows")
    d = x.shape[1]
    all_features = np.arange(d)
    buf = TreeBuffer(n_classes)
    stack = [(np.arange(len(x)), 0, buf.add_leaf(np.zeros(n_classes)))]
    while stack:
        rows, depth, node = stack.pop()
        yn = y[rows]
        counts = np.bincount(yn, minlength=n_classes)
        buf.value[node][:] = counts / len(rows)
        if (
            len(rows) < min_samples_split
            or np.count_nonzero(counts) <= 1
            or (max_depth is not None and depth >= max_depth)
        ):
            continue
        if features_per_split is not None and features_per_split < d:
            feats = np.sort(rng.choice(d, size=features_per_split, replace=False))
        else:
            feats = all_features
        xn = x[rows]
        score, feature, threshold = _best_gini_split(xn, yn, feats, n_classes)
        if feature < 0 and len(feats) < d:
            # sampled features were all constant here; fall back to the others
            rest = np.setdiff1d(all_features, feats)
            score, feature, threshold = _best_gini_split(xn, yn, rest, n_classes)
        if feature < 0:
            continue  # every candidate feature is constant on this node
        go_left = x[rows, feature] < threshold
        left = buf.add_leaf(np.zeros(n_classes))
        right = buf.add_leaf(np.zeros(n_classes))
        buf.make_split(node, feature, threshold, left, right)
        stack.append((rows[~go_left], depth + 1, right))
        stack.append((rows[go_left], depth + 1, left))
    return buf.freeze(d)


class DecisionTree:
    kind = "dt"

    def __init__(self, cfg: DTConfig = DTConfig()):
        self.cfg = cfg
        self.tree: FlatTree | None = None
        self.n_classes = 0

    def fit(self, x: np.ndarray, y: np.ndarray, n_classes: int) -> DecisionTree:
        self.n_classes = n_classes
        self.tree = grow_gini_tree(x, y, n_classes, self.cfg.max_depth, self.cfg.min_samples_split)
        return self

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return self.tree.predict_value(x)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(x), axis=1)

    def state(self) -> dict:
        return {"tree": self.tree.to_dict()}

    def load_state(self, state: dict, n_classes: int) -> DecisionTree:
        self.n_classes = n_classes
        self.tree = FlatTree.from_dict(state["tree"])
        return self


class RandomForest:
    kind = "rf"

    def __init__(self, cfg: RFConfig = RFConfig()):
        self.cfg = cfg
        self.trees: list[FlatTree] = []
        self.n_classes = 0

    def _grow(self, x, y, seq: np.random.SeedSequence, m: int) -> FlatTree:
        rng = np.random.default_rng(seq)
        n = len(x)
        if self.cfg.bootstrap:
            rows = np.sort(rng.integers(0, n, size=n))
            xb, yb = x[rows], y[rows]
        else:
            xb, yb = x, y
        return grow_gini_tree(xb, yb, self.n_classes, self.cfg.max_depth, self.cfg.min_samples_split, m, rng)

    def fit(self, x: np.ndarray, y: np.ndarray, n_classes: int) -> RandomForest:
        self.n_classes = n_classes
        m = self.cfg.resolved_features(x.shape[1])
        seqs = np.random.SeedSequence(self.cfg.seed & 0xFFFFFFFFFFFFFFFF).spawn(self.cfg.n_trees)
        if self.cfg.n_jobs > 1:
            with ThreadPoolExecutor(self.cfg.n_jobs) as pool:
                self.trees = list(pool.map(lambda s: self._grow(x, y, s, m), seqs))
        else:
            self.trees = [self._grow(x, y, s, m) for s in seqs]
        return self

    def votes(self, x: np.ndarray) -> np.ndarray:
        counts = np.zeros((len(x), self.n_classes), dtype=np.int64)
        rows = np.arange(len(x))
        for tree in self.trees:
            counts[rows, np.argmax(tree.predict_value(x), axis=1)] += 1
        return counts

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.votes(x), axis=1)  # ties -> lowest class id

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        total = np.zeros((len(x), self.n_classes))
        for tree in self.trees:
            total += tree.predict_value(x)
        return total / len(self.trees)

    def state(self) -> dict:
        return {"trees": [t.to_dict() for t in self.trees]}

    def load_state(self, state: dict, n_classes: int) -> RandomForest:
        self.n_classes = n_classes
        self.trees = [FlatTree.from_dict(t) for t in state["trees"]]
        return self
