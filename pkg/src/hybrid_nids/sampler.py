"""SMOTE oversampling to the majority class count."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .errors import ArgumentError, BalancingError, ConfigError
from .ingest import Dataset
from .neighbors import k_nearest

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SmoteConfig:
    k_neighbors: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ConfigError("must be >= 1", path="smote.k_neighbors")


def class_stream(seed: int, class_id: int) -> np.random.Generator:
    """Independent PCG64 stream for one class, keyed on (seed, class id)."""
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, class_id]))


def knn_index(points: np.ndarray, k: int) -> np.ndarray:
    """The ``k`` nearest other points of every point (ties to lower index)."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if not 1 <= k < n:
        raise ArgumentError(f"k={k} must satisfy 1 <= k < n={n}")
    idx, _ = k_nearest(points, points, k, self_index=np.arange(n))
    return idx


def smote(data: Dataset, cfg: SmoteConfig = SmoteConfig()) -> Dataset:
    """Oversample every class up to the majority count.

    Originals come first in their original order, followed by synthetic rows
    grouped by ascending class id. Each synthetic row lies on the segment
    between a class sample and one of its ``k`` nearest same-class neighbors.
    """
    counts = data.class_counts()
    present = np.flatnonzero(counts)
    if len(present) < 2:
        raise BalancingError("SMOTE needs at least two classes")
    target = int(counts.max())
    new_x, new_y = [], []
    for c in range(data.n_classes):
        m = int(counts[c])
        need = target - m
        if need == 0:
            continue
        name = data.class_names[c]
        if m < 2:
            raise BalancingError(f"class {name!r} has {m} sample(s); SMOTE needs at least 2")
        k = cfg.k_neighbors
        if m <= k:
            logger.warning("class %r has %d samples; clamping k_neighbors %d -> %d", name, m, k, m - 1)
            k = m - 1
        pts = data.x[data.y == c]
        rng = class_stream(cfg.seed, c)
        base = rng.integers(0, m, size=need)
        pick = rng.integers(0, k, size=need)
        u = rng.random(size=need)
        bases = np.unique(base)
        nbrs, _ = k_nearest(pts[bases], pts, k, self_index=bases)
        row_of = np.searchsorted(bases, base)
        a = pts[base]
        b = pts[nbrs[row_of, pick]]
        synth = a + u[:, None] * (b - a)
        # rounding can push a + u(b - a) one ulp past the far endpoint
        synth = np.clip(synth, np.minimum(a, b), np.maximum(a, b))
        new_x.append(synth)
        new_y.append(np.full(need, c, dtype=np.int64))
        logger.info("smote: class %r %d -> %d (k=%d)", name, m, target, k)
    if not new_x:
        return data
    x = np.vstack([data.x, *new_x])
    y = np.concatenate([data.y, *new_y])
    return replace(data, x=x, y=y)
