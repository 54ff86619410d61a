from __future__ import annotations

import numpy as np
import pytest

from hybrid_nids.errors import ArgumentError, BalancingError
from hybrid_nids.ingest import Dataset
from hybrid_nids.neighbors import k_nearest
from hybrid_nids.sampler import SmoteConfig, knn_index, smote


def _data(x, y, n_classes=None):
    x = np.asarray(x, dtype=float)
    n_classes = n_classes or int(np.max(y)) + 1
    return Dataset(x, np.asarray(y), tuple(f"f{j}" for j in range(x.shape[1])), tuple(f"c{k}" for k in range(n_classes)))


def brute_knn(points: np.ndarray, k: int) -> np.ndarray:
    out = []
    for i, p in enumerate(points):
        d = ((points - p) ** 2).sum(axis=1)
        cand = sorted((d[j], j) for j in range(len(points)) if j != i)
        out.append([j for _, j in cand[:k]])
    return np.array(out)


def test_knn_collinear_example():
    assert knn_index(np.array([[0.0], [1.0], [10.0]]), 1)[:, 0].tolist() == [1, 0, 1]


def test_knn_identical_points_lowest_index():
    nb = knn_index(np.zeros((4, 2)), 2)
    assert nb.tolist() == [[1, 2], [0, 2], [0, 1], [0, 1]]


def test_knn_k_is_n_minus_one():
    pts = np.random.default_rng(0).normal(size=(6, 3))
    nb = knn_index(pts, 5)
    for i, row in enumerate(nb):
        assert sorted(row) == [j for j in range(6) if j != i]


@pytest.mark.parametrize("k", [0, 3, 4])  # k >= n is rejected too
def test_knn_bad_k(k):
    with pytest.raises(ArgumentError):
        knn_index(np.zeros((3, 1)), k)


@pytest.mark.parametrize("seed", range(30))
def test_knn_matches_brute_force(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(2, 60))
    pts = r.integers(-3, 4, size=(n, int(r.integers(1, 4)))).astype(float)  # many exact ties
    if seed % 2:
        pts = pts * 1e3 + r.normal(scale=1e-3, size=pts.shape)
    k = int(r.integers(1, n))
    assert np.array_equal(knn_index(pts, k), brute_knn(pts, k))


def test_k_nearest_queries_against_reference(rng):
    ref = rng.normal(size=(40, 2))
    q = rng.normal(size=(7, 2))
    idx, d2 = k_nearest(q, ref, 3)
    for i in range(7):
        dist = ((ref - q[i]) ** 2).sum(1)
        assert idx[i].tolist() == sorted(range(40), key=lambda j: (dist[j], j))[:3]
        assert np.allclose(d2[i], dist[idx[i]])


# ---------------------------------------------------------------- smote


def test_smote_balances_to_majority():
    r = np.random.default_rng(1)
    y = np.repeat([0, 1, 2], [40, 9, 3])
    data = _data(r.normal(size=(52, 2)), y)
    out = smote(data, SmoteConfig(5, 7))
    assert out.class_counts().tolist() == [40, 40, 40]


def test_smote_equalization_arithmetic():
    # five classes sized like the KDD 10% categories end at 5 x majority
    counts = np.array([391458, 97278, 4107, 1126, 52])
    assert int(counts.max()) * len(counts) == 1957290


def test_smote_balanced_input_unchanged():
    data = _data(np.arange(8.0).reshape(4, 2), [0, 1, 0, 1])
    assert smote(data) is data


def test_smote_identical_minority_points():
    x = np.vstack([np.arange(20.0).reshape(10, 2), [[3.0, 3.0], [3.0, 3.0]]])
    y = [0] * 10 + [1, 1]
    out = smote(_data(x, y))
    synth = out.x[12:]
    assert np.all(synth == 3.0)


def test_smote_errors():
    with pytest.raises(BalancingError, match="c1"):
        smote(_data(np.arange(6.0).reshape(3, 2), [0, 0, 1]))
    with pytest.raises(BalancingError):
        smote(_data(np.arange(6.0).reshape(3, 2), [0, 0, 0], n_classes=2))
    with pytest.raises(Exception):
        SmoteConfig(k_neighbors=0)


def test_smote_clamps_small_class(caplog):
    x = np.vstack([np.random.default_rng(0).normal(size=(20, 2)), [[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]]])
    y = [0] * 20 + [1] * 3
    with caplog.at_level("WARNING"):
        out = smote(_data(x, y), SmoteConfig(k_neighbors=5))
    assert "clamping" in caplog.text
    assert out.class_counts().tolist() == [20, 20]


def test_smote_seed_changes_only_synthetics():
    r = np.random.default_rng(2)
    data = _data(r.normal(size=(30, 3)), [0] * 24 + [1] * 6)
    a, b = smote(data, SmoteConfig(3, 1)), smote(data, SmoteConfig(3, 2))
    assert np.array_equal(a.x[:30], b.x[:30])
    assert not np.array_equal(a.x[30:], b.x[30:])
