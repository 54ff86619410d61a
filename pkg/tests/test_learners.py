from __future__ import annotations

import json

import numpy as np
import pytest

from hybrid_nids import learners
from hybrid_nids.errors import ArgumentError, ConfigError, DivergenceError, ShapeError
from hybrid_nids.learners.cart import DecisionTree, DTConfig, RandomForest, RFConfig
from hybrid_nids.learners.knn import KNearestNeighbors, KNNConfig
from hybrid_nids.learners.mlp import MLP, MLPConfig, init_params, loss_and_grads
from hybrid_nids.synth import generate_synthetic

import oracles


def noisy_fixture(seed: int, n: int = 400):
    r = np.random.default_rng(seed)
    x = r.normal(size=(n, 6))
    y = ((x[:, 0] + x[:, 1] + r.normal(scale=0.8, size=n)) > 0).astype(int)
    return x, y


# ---------------------------------------------------------------- decision tree


def test_dt_single_class_is_leaf(rng):
    tree = DecisionTree().fit(rng.normal(size=(10, 2)), np.full(10, 2), 3)
    assert tree.tree.n_nodes == 1
    assert tree.predict(rng.normal(size=(4, 2))).tolist() == [2, 2, 2, 2]


def test_dt_one_split_fixture():
    x = np.array([[0.0, 5.0], [1.0, 3.0], [2.0, 9.0], [3.0, 1.0]])
    y = np.array([0, 0, 1, 1])
    tree = DecisionTree().fit(x, y, 2)
    assert tree.tree.depth() == 1 and tree.tree.feature[0] == 0
    assert np.array_equal(tree.predict(x), y)


def check_gini_nodes(tree, x, y, n_classes):
    for node, rows in oracles.rows_at_nodes(tree, x).items():
        if tree.feature[node] < 0:
            continue
        cands = oracles.gini_splits(x[rows], y[rows], n_classes)
        best = min(c[0] for c in cands)
        near = [c for c in cands if c[0] <= best + 1e-12]
        f = tree.feature[node]
        mask = x[rows, f] < tree.threshold[node]
        assert any(c[1] == f and np.array_equal(c[2], mask) for c in near)
        assert (f, int(mask.sum())) == (near[0][1], int(near[0][2].sum()))


@pytest.mark.parametrize("seed", range(25))
def test_dt_splits_match_gini_enumeration(seed):
    r = np.random.default_rng(100 + seed)
    n, d, k = int(r.integers(2, 120)), int(r.integers(1, 5)), int(r.integers(2, 4))
    x = r.integers(0, 6, size=(n, d)).astype(float)
    y = r.integers(0, k, n)
    tree = DecisionTree(DTConfig(max_depth=3)).fit(x, y, k)
    check_gini_nodes(tree.tree, x, y, k)


def test_dt_row_permutation_invariant():
    x, y = noisy_fixture(3)
    perm = np.random.default_rng(0).permutation(len(y))
    a = DecisionTree().fit(x, y, 2)
    b = DecisionTree().fit(x[perm], y[perm], 2)
    probe = np.random.default_rng(9).normal(size=(200, 6))
    assert np.array_equal(a.predict_proba(probe), b.predict_proba(probe))


def test_dt_config_validation():
    with pytest.raises(ConfigError):
        DTConfig(min_samples_split=1)
    with pytest.raises(ConfigError):
        DTConfig(criterion="entropy")


# ---------------------------------------------------------------- random forest


def test_rf_degenerate_equals_dt():
    x, y = noisy_fixture(4)
    rf = RandomForest(RFConfig(n_trees=1, bootstrap=False, features_per_split=6)).fit(x, y, 2)
    dt = DecisionTree().fit(x, y, 2)
    probe = np.random.default_rng(1).normal(size=(300, 6))
    assert np.array_equal(rf.predict(probe), dt.predict(probe))


def test_rf_vote_ties_lowest_class():
    rf = RandomForest(RFConfig(n_trees=3))
    rf.n_classes = 2
    rf.votes = lambda x: np.array([[2, 1], [1, 2], [1, 1]])
    assert rf.predict(np.zeros((3, 1))).tolist() == [0, 1, 0]


def test_rf_deterministic_and_thread_independent():
    x, y = noisy_fixture(5)
    a = RandomForest(RFConfig(n_trees=8, seed=11)).fit(x, y, 2)
    b = RandomForest(RFConfig(n_trees=8, seed=11, n_jobs=3)).fit(x, y, 2)
    assert json.dumps(a.state()) == json.dumps(b.state())


def test_rf_beats_dt_on_noisy_fixture():
    wins = 0
    for seed in range(10):
        x, y = noisy_fixture(seed, 500)
        tr, te = slice(0, 350), slice(350, None)
        rf = RandomForest(RFConfig(n_trees=25, seed=seed)).fit(x[tr], y[tr], 2)
        dt = DecisionTree().fit(x[tr], y[tr], 2)
        wins += np.mean(rf.predict(x[te]) == y[te]) >= np.mean(dt.predict(x[te]) == y[te])
    assert wins > 5


def test_rf_features_per_split_bounds():
    with pytest.raises(ConfigError):
        RFConfig(features_per_split=9).resolved_features(4)
    assert RFConfig().resolved_features(41) == 7


# ---------------------------------------------------------------- knn


def test_knn_examples():
    x = np.array([[0.0], [1.0], [2.0], [10.0]])
    y = np.array([1, 1, 0, 0])
    m1 = KNearestNeighbors(KNNConfig(k=1)).fit(x, y, 2)
    assert m1.predict(x).tolist() == y.tolist()
    m3 = KNearestNeighbors(KNNConfig(k=3)).fit(x, y, 2)
    assert m3.predict(np.array([[0.5]])).tolist() == [1]


def test_knn_vote_and_distance_ties():
    x = np.array([[-1.0], [1.0]])
    m = KNearestNeighbors(KNNConfig(k=1)).fit(x, np.array([1, 0]), 2)
    assert m.predict(np.array([[0.0]])).tolist() == [1]  # equidistant: lower row index wins
    m2 = KNearestNeighbors(KNNConfig(k=2)).fit(x, np.array([1, 0]), 2)
    assert m2.predict(np.array([[0.0]])).tolist() == [0]  # 1-1 vote: lowest class id


def test_knn_k_too_large():
    m = KNearestNeighbors(KNNConfig(k=5)).fit(np.zeros((3, 1)), np.array([0, 1, 0]), 2)
    with pytest.raises(ArgumentError):
        m.predict(np.zeros((1, 1)))


def test_knn_two_cluster_accuracy():
    data = generate_synthetic([200, 200], 2, 0, seed=3)
    m = KNearestNeighbors().fit(data.x[:300], data.y[:300], 2)
    assert np.mean(m.predict(data.x[300:]) == data.y[300:]) >= 0.95


def test_knn_k1_training_accuracy(rng):
    x = rng.normal(size=(100, 3))
    y = rng.integers(0, 3, 100)
    assert np.array_equal(KNearestNeighbors(KNNConfig(k=1)).fit(x, y, 3).predict(x), y)


# ---------------------------------------------------------------- mlp


def mlp_fd_max_relative_error(seed: int) -> float:
    r = np.random.default_rng(seed)
    params = init_params(2, (3,), 2, r)
    params = [(w, r.normal(scale=0.3, size=b.shape)) for w, b in params]
    x = r.normal(size=(7, 2))
    y = r.integers(0, 2, 7)
    _, grads = loss_and_grads(params, x, y)
    worst = 0.0
    eps = 1e-6
    for layer in range(len(params)):
        for which in (0, 1):
            arr = params[layer][which]
            for idx in np.ndindex(arr.shape):
                orig = arr[idx]
                arr[idx] = orig + eps
                up = loss_and_grads(params, x, y)[0]
                arr[idx] = orig - eps
                down = loss_and_grads(params, x, y)[0]
                arr[idx] = orig
                fd = (up - down) / (2 * eps)
                an = grads[layer][which][idx]
                worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-7))
    return worst


@pytest.mark.parametrize("seed", range(3))
def test_mlp_gradients_finite_difference(seed):
    assert mlp_fd_max_relative_error(seed) <= 1e-5


def test_mlp_zero_hidden_layers_separable():
    r = np.random.default_rng(0)
    x = r.normal(size=(200, 2))
    y = (x[:, 0] - x[:, 1] > 0).astype(int)
    x = x + np.where(y[:, None] == 1, 0.5, -0.5) * np.array([1, -1])  # widen the margin
    m = MLP(MLPConfig(hidden_layers=(), epochs=60, batch_size=16, learning_rate=0.1)).fit(x, y, 2)
    assert np.mean(m.predict(x) == y) == 1.0


def test_mlp_probabilities_and_purity(rng):
    m = MLP(MLPConfig(hidden_layers=(8,), epochs=2)).fit(rng.normal(size=(50, 4)), rng.integers(0, 3, 50), 3)
    q = rng.normal(scale=5, size=(40, 4))
    p = m.predict_proba(q)
    assert np.all(np.abs(p.sum(axis=1) - 1) <= 1e-9)
    assert np.array_equal(p, m.predict_proba(q))


def test_mlp_loss_decreases_early():
    data = generate_synthetic([150, 150], 3, 2, seed=1)
    m = MLP(MLPConfig(epochs=5)).fit(data.x, data.y, 2)
    assert all(a > b for a, b in zip(m.loss_history, m.loss_history[1:]))


def test_mlp_deterministic_and_snapshots():
    data = generate_synthetic([60, 60], 2, 1, seed=2)
    a = MLP(MLPConfig(epochs=6, seed=4)).fit(data.x, data.y, 2, checkpoints=(3,))
    b = MLP(MLPConfig(epochs=3, seed=4)).fit(data.x, data.y, 2)
    assert np.array_equal(a.snapshots[3].predict_proba(data.x), b.predict_proba(data.x))


def test_mlp_divergence_error():
    x = np.array([[1e200, -1e200], [-1e200, 1e200]])
    with pytest.raises(DivergenceError, match="learning rate"):
        MLP(MLPConfig(epochs=3, learning_rate=10.0)).fit(x, np.array([0, 1]), 2)


# ---------------------------------------------------------------- registry and serialization


@pytest.mark.parametrize("name", ["rf", "dt", "knn", "mlp", "ann", "xgb"])
def test_model_roundtrip(name):
    data = generate_synthetic([40, 30, 30], 2, 2, seed=5)
    overrides = {"rf": {"n_trees": 5}, "mlp": {"epochs": 3}, "ann": {"epochs": 3}, "xgb": {"n_rounds": 3}}
    spec = learners.learner_spec(name, **overrides.get(name, {}))
    model = learners.fit(spec, data.x, data.y, 3, features=(0, 1, 2, 3))
    again = learners.model_from_dict(json.loads(json.dumps(model.to_dict())))
    assert np.array_equal(again.predict(data.x), model.predict(data.x))
    assert np.allclose(again.predict_proba(data.x), model.predict_proba(data.x), rtol=0, atol=0)
    assert np.all(np.abs(model.predict_proba(data.x).sum(axis=1) - 1) <= 1e-9)
    with pytest.raises(ShapeError):
        model.predict(data.x[:, :2])


def test_ann_and_mlp_are_distinct_configs():
    assert learners.DEFAULT_LEARNERS["ann"].config.hidden_layers == (64,)
    assert learners.DEFAULT_LEARNERS["mlp"].config.hidden_layers == (128, 64)
    assert learners.SELECTION_LEARNERS == ("rf", "dt", "knn", "mlp")
