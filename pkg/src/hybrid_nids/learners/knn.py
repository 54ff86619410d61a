"""Brute-force Euclidean k-nearest-neighbor classifier."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ArgumentError, ConfigError
from ..neighbors import k_nearest
from ..storage import decode_array, encode_array


@dataclass(frozen=True)
class KNNConfig:
    k: int = 5
    metric: str = "euclidean"
    max_reference: int | None = None  # stratified cap on the stored training set
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("must be >= 1", path="knn.k")
        if self.metric != "euclidean":
            raise ConfigError("only 'euclidean' is supported", path="knn.metric")
        if self.max_reference is not None and self.max_reference < 1:
            raise ConfigError("must be >= 1", path="knn.max_reference")


def _stratified_cap(y: np.ndarray, cap: int, seed: int) -> np.ndarray:
    n = len(y)
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(y, return_counts=True)
    quota = np.maximum(1, np.floor(counts * cap / n).astype(np.int64))
    quota = np.minimum(quota, counts)
    keep = [rng.choice(np.flatnonzero(y == c), size=q, replace=False) for c, q in zip(classes, quota)]
    return np.sort(np.concatenate(keep))


class KNearestNeighbors:
    kind = "knn"

    def __init__(self, cfg: KNNConfig = KNNConfig()):
        self.cfg = cfg
        self.x: np.ndarray | None = None
        self.y: np.ndarray | None = None
        self.n_classes = 0

    def fit(self, x: np.ndarray, y: np.ndarray, n_classes: int) -> KNearestNeighbors:
        if self.cfg.max_reference is not None and len(x) > self.cfg.max_reference:
            rows = _stratified_cap(y, self.cfg.max_reference, self.cfg.seed)
            x, y = x[rows], y[rows]
        self.x = np.array(x, dtype=np.float64)
        self.y = np.array(y, dtype=np.int64)
        self.n_classes = n_classes
        return self

    def votes(self, x: np.ndarray) -> np.ndarray:
        if self.cfg.k > len(self.x):
            raise ArgumentError(f"k={self.cfg.k} exceeds the {len(self.x)} stored training rows")
        idx, _ = k_nearest(np.atleast_2d(x), self.x, self.cfg.k)
        labels = self.y[idx]
        counts = np.zeros((len(labels), self.n_classes), dtype=np.int64)
        for j in range(self.cfg.k):
            counts[np.arange(len(labels)), labels[:, j]] += 1
        return counts

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.votes(x), axis=1)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return self.votes(x) / self.cfg.k

    def state(self) -> dict:
        return {"x": encode_array(self.x), "y": encode_array(self.y)}

    def load_state(self, state: dict, n_classes: int) -> KNearestNeighbors:
        self.x = decode_array(state["x"])
        self.y = decode_array(state["y"])
        self.n_classes = n_classes
        return self
