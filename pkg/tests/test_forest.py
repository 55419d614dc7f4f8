import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.base import clone

from heatcast.forest import Forest, QuantileRegressionForest, predict_quantile, train_forest
from heatcast.tree import TreeParams
from oracles import generalized_inverse_quantile

QS = [round(0.01 * k, 2) for k in range(1, 100)]


def root_only(X, y):
    return train_forest(X, y, n_trees=1, params=TreeParams(max_depth=0, min_node=1),
                        bootstrap=False)


def test_single_leaf_forest_is_empirical_quantile(rng):
    for _ in range(20):
        n = int(rng.integers(1, 25))
        y = np.round(rng.normal(size=n) * 5, int(rng.integers(0, 3)))
        X = rng.normal(size=(n, 2))
        got = root_only(X, y).quantiles(X[:1], QS)[0]
        ref = [generalized_inverse_quantile(y, q) for q in QS]
        assert np.array_equal(got, ref)


def test_hand_checked_levels():
    y = np.arange(1.0, 11.0)
    f = root_only(y.reshape(-1, 1), y)
    got = f.quantiles([[0.0]], [0.05, 0.5, 0.91])[0]
    assert got.tolist() == [1.0, 5.0, 10.0]


def test_weights_are_probabilities(rng):
    X = rng.normal(size=(60, 3))
    y = rng.normal(size=60)
    f = train_forest(X, y, n_trees=40, seed=1)
    W = f.weights(rng.normal(size=(7, 3)))
    assert W.shape == (7, 60) and np.all(W >= 0)
    assert np.allclose(W.sum(axis=1), 1.0, atol=1e-12)


def test_seeded_and_json_round_trip(rng, tmp_path):
    X = rng.normal(size=(50, 2))
    y = X[:, 0] + rng.normal(size=50)
    a = train_forest(X, y, n_trees=30, seed=9)
    b = train_forest(X, y, n_trees=30, seed=9)
    Q = rng.normal(size=(10, 2))
    assert np.array_equal(a.quantiles(Q, [0.1, 0.9]), b.quantiles(Q, [0.1, 0.9]))
    back = Forest.from_dict(json.loads(json.dumps(a.to_dict())))
    assert np.array_equal(back.quantiles(Q, [0.1, 0.9]), a.quantiles(Q, [0.1, 0.9]))
    a.to_json(tmp_path / "f.json")
    assert np.array_equal(Forest.from_json(tmp_path / "f.json").weights(Q), a.weights(Q))


def test_adapts_to_heteroscedastic_noise(rng):
    x = rng.uniform(0, 10, size=800)
    y = rng.normal(scale=0.2 + x / 2)
    f = train_forest(x.reshape(-1, 1), y, n_trees=100, seed=2)
    q = f.quantiles([[1.0], [9.0]], [0.05, 0.95])
    assert q[1, 1] - q[1, 0] > 2 * (q[0, 1] - q[0, 0])


def test_extreme_levels_sparse_tail(rng):
    # mostly moderate responses with a handful of large outliers
    X = rng.normal(size=(300, 2))
    y = rng.normal(size=300)
    y[rng.choice(300, 4, replace=False)] += 25.0
    f = train_forest(X, y, seed=3)
    q = f.quantiles(rng.normal(size=(50, 2)), [0.01, 0.5, 0.99])
    assert np.all(np.isfinite(q))
    assert np.all(q[:, 0] <= q[:, 1]) and np.all(q[:, 1] <= q[:, 2])
    assert np.all(q[:, 2] > q[:, 0])
    assert q.min() >= y.min() and q.max() <= y.max()


@given(st.integers(0, 2**31 - 1), st.lists(st.floats(0.001, 0.999), min_size=2, max_size=6))
def test_quantiles_monotone_in_level(seed, levels):
    r = np.random.default_rng(seed)
    X = r.normal(size=(30, 2))
    y = r.normal(size=30)
    f = train_forest(X, y, n_trees=10, seed=seed)
    q = f.quantiles(r.normal(size=(5, 2)), sorted(levels))
    assert np.all(np.diff(q, axis=1) >= 0)


def test_vector_query_and_errors(rng):
    X = rng.normal(size=(30, 1))
    f = train_forest(X, X[:, 0], n_trees=5)
    assert isinstance(predict_quantile(f, [0.3], 0.5), float)
    with pytest.raises(ValueError):
        f.quantiles(X, [1.0])
    with pytest.raises(ValueError):
        train_forest(X[:3], X[:3, 0])


def test_estimator_api(rng):
    X = rng.normal(size=(40, 3))
    y = rng.normal(size=40)
    est = QuantileRegressionForest(n_estimators=20, quantile=0.9).fit(X, y)
    assert np.array_equal(est.predict(X), est.forest_.quantiles(X, [0.9])[:, 0])
    assert est.predict_quantiles(X, [0.1, 0.9]).shape == (40, 2)
    assert clone(est).get_params()["quantile"] == 0.9
