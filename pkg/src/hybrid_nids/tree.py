"""Array-backed binary tree shared by the boosting engine and CART learners."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

LEAF = -1


@dataclass(frozen=True)
class FlatTree:
    """Node arrays; node 0 is the root.

    Internal nodes route ``x[feature] < threshold`` to ``left``, otherwise to
    ``right``. ``value`` holds one row per node (a boosting leaf weight, or the
    class fractions of a classification leaf); only leaf rows are read.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_features: int

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature == LEAF))

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for node in range(self.n_nodes):
            if self.feature[node] != LEAF:
                depth[self.left[node]] = depth[self.right[node]] = depth[node] + 1
        return int(depth.max())

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ShapeError(f"expected {self.n_features} features, got {x.shape[-1]}")
        node = np.zeros(len(x), dtype=np.int64)
        active = np.flatnonzero(self.feature[node] != LEAF)
        while len(active):
            cur = node[active]
            go_left = x[active, self.feature[cur]] < self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
            active = active[self.feature[node[active]] != LEAF]
        return node

    def predict_value(self, x: np.ndarray) -> np.ndarray:
        return self.value[self.apply(x)]

    def to_dict(self) -> dict:
        return {
            "n_features": self.n_features,
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> FlatTree:
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=np.float64),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=np.float64).reshape(len(d["feature"]), -1),
            int(d["n_features"]),
        )


class TreeBuffer:
    """Growable node storage used while a tree is under construction."""

    def __init__(self, value_width: int):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[np.ndarray] = []
        self.width = value_width

    def add_leaf(self, value) -> int:
        self.feature.append(LEAF)
        self.threshold.append(0.0)
        self.left.append(LEAF)
        self.right.append(LEAF)
        self.value.append(np.asarray(value, dtype=np.float64).reshape(self.width))
        return len(self.feature) - 1

    def make_split(self, node: int, feature: int, threshold: float, left: int, right: int) -> None:
        self.feature[node] = feature
        self.threshold[node] = threshold
        self.left[node] = left
        self.right[node] = right

    def freeze(self, n_features: int) -> FlatTree:
        return FlatTree(
            np.asarray(self.feature, dtype=np.int64),
            np.asarray(self.threshold, dtype=np.float64),
            np.asarray(self.left, dtype=np.int64),
            np.asarray(self.right, dtype=np.int64),
            np.vstack(self.value) if self.value else np.zeros((0, self.width)),
            n_features,
        )


def midpoint(lo: float, hi: float) -> float:
    """Threshold strictly above ``lo`` and at most ``hi``."""
    mid = lo + (hi - lo) / 2.0
    return hi if mid <= lo else mid


def candidate_positions(sorted_values: np.ndarray) -> np.ndarray:
    """Positions ``i`` with ``v[i] < v[i+1]``: split between i and i+1."""
    return np.flatnonzero(sorted_values[:-1] < sorted_values[1:])
