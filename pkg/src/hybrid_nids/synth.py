"""Gaussian-cluster datasets for dataset-free runs and tests."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ArgumentError
from .ingest import Dataset


def generate_synthetic(
    class_counts: Sequence[int],
    informative: int,
    noise: int = 0,
    seed: int = 0,
    separation: float = 6.0,
) -> Dataset:
    """Draw one unit-variance Gaussian blob per class.

    Class ``c`` is centred at ``c * separation / sqrt(informative)`` on every
    informative axis, so consecutive class centres are ``separation`` standard
    deviations apart. Noise columns are N(0, 1) regardless of class. Rows are
    shuffled; informative columns come first.
    """
    counts = [int(c) for c in class_counts]
    if len(counts) < 2:
        raise ArgumentError("need at least two classes")
    if any(c < 1 for c in counts):
        raise ArgumentError("every class needs at least one row")
    if informative < 1:
        raise ArgumentError("need at least one informative feature")
    if noise < 0:
        raise ArgumentError("noise feature count must be >= 0")
    rng = np.random.default_rng(seed)
    step = separation / np.sqrt(informative)
    blocks, labels = [], []
    for c, m in enumerate(counts):
        blocks.append(rng.standard_normal((m, informative)) + c * step)
        labels.append(np.full(m, c))
    x_inf = np.vstack(blocks)
    y = np.concatenate(labels)
    x = np.hstack([x_inf, rng.standard_normal((len(y), noise))])
    order = rng.permutation(len(y))
    names = tuple(f"inf_{j}" for j in range(informative)) + tuple(f"noise_{j}" for j in range(noise))
    classes = tuple(f"class_{c}" for c in range(len(counts)))
    return Dataset(x[order], y[order], names, classes)


def to_csv(data: Dataset, path: str | Path, label: str = "label") -> None:
    """Write ``data`` in the generic schema: header, features, label text last."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*data.feature_names, label])
        for row, c in zip(data.x, data.y):
            w.writerow([*(repr(float(v)) for v in row), data.class_names[c]])
