"""Quantile regression forests.

Trees are grown with ordinary variance splits on bootstrap resamples. The
response quantile is recovered only at query time from the weighted empirical
distribution of the training responses sharing a leaf with the query point,
so extreme quantile levels never influence how the forest is built.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_fraction, check_matrix, check_training_data
from .tree import Tree, TreeParams, grow

__all__ = [
    "Forest",
    "default_forest_params",
    "train_forest",
    "predict_quantile",
    "QuantileRegressionForest",
]

FOREST_FORMAT_VERSION = 1

# cumulative weights are sums of 1/(n_trees * leaf_size); absorb their rounding
_CDF_TOL = 1e-10


def default_forest_params(n_features: int, seed: int = 0) -> TreeParams:
    return TreeParams(max_depth=None, min_node=5,
                      features_per_split=max(1, n_features // 3), rng_seed=seed)


@dataclass(eq=False)
class Forest:
    trees: list[Tree]
    train_response: np.ndarray
    n_trees: int
    params: TreeParams
    bootstrap: bool
    seed: int
    n_features: int
    _packed: Optional[tuple] = field(default=None, repr=False)

    def _pack(self) -> tuple:
        if self._packed is None:
            node_off = np.zeros(len(self.trees) + 1, dtype=np.int64)
            mem_off = np.zeros(len(self.trees) + 1, dtype=np.int64)
            for i, t in enumerate(self.trees):
                node_off[i + 1] = node_off[i] + t.n_nodes
                mem_off[i + 1] = mem_off[i] + t.members.shape[0]
            cat = lambda name, dt: np.concatenate(
                [getattr(t, name) for t in self.trees]).astype(dt)
            self._packed = (
                node_off, cat("feature", np.int32), cat("threshold", np.float64),
                cat("left", np.int32), cat("right", np.int32),
                cat("leaf_start", np.int64), cat("leaf_size", np.int64),
                mem_off, cat("members", np.int64),
            )
        return self._packed

    def weights(self, X) -> np.ndarray:
        """Weight of every training response for every query row, shape (m, n)."""
        X = check_matrix(X, n_features=self.n_features)
        return _forest_weights(X, *self._pack(), self.train_response.shape[0])

    def quantiles(self, X, qs: Sequence[float]) -> np.ndarray:
        """Left-continuous inverse of the weighted CDF, shape (m, len(qs))."""
        qs = np.atleast_1d(np.asarray(qs, dtype=np.float64))
        for q in qs:
            check_fraction(q, "q")
        W = self.weights(X)
        order = np.argsort(self.train_response, kind="mergesort")
        sorted_y = self.train_response[order]
        cum = np.cumsum(W[:, order], axis=1)
        out = np.empty((W.shape[0], qs.size))
        for j, q in enumerate(qs):
            idx = np.argmax(cum >= q - _CDF_TOL, axis=1)
            out[:, j] = sorted_y[idx]
        return out

    def to_dict(self) -> dict:
        return {
            "format": "heatcast.forest",
            "version": FOREST_FORMAT_VERSION,
            "n_trees": self.n_trees,
            "n_features": self.n_features,
            "bootstrap": bool(self.bootstrap),
            "seed": int(self.seed),
            "params": {
                "max_depth": self.params.max_depth,
                "min_node": self.params.min_node,
                "features_per_split": self.params.features_per_split,
            },
            "train_response": [float(v) for v in self.train_response],
            "trees": [t.to_dict(include_members=True) for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Forest":
        if d.get("format") != "heatcast.forest" or d.get("version") != FOREST_FORMAT_VERSION:
            raise ValueError("not a supported serialized forest")
        pr = d["params"]
        params = TreeParams(max_depth=pr["max_depth"], min_node=pr["min_node"],
                            features_per_split=pr["features_per_split"], rng_seed=d["seed"])
        trees = [Tree.from_dict(t) for t in d["trees"]]
        return cls(trees=trees, train_response=np.asarray(d["train_response"], dtype=np.float64),
                   n_trees=int(d["n_trees"]), params=params, bootstrap=bool(d["bootstrap"]),
                   seed=int(d["seed"]), n_features=int(d["n_features"]))

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(), fh, separators=(",", ":"))

    @classmethod
    def from_json(cls, path) -> "Forest":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@njit(cache=True)
def _forest_weights(X, node_off, feature, threshold, left, right, leaf_start,
                    leaf_size, mem_off, members, n_train):
    m = X.shape[0]
    n_trees = node_off.shape[0] - 1
    W = np.zeros((m, n_train))
    for i in range(m):
        for t in range(n_trees):
            base = node_off[t]
            node = 0
            while feature[base + node] >= 0:
                if X[i, feature[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            size = leaf_size[base + node]
            start = mem_off[t] + leaf_start[base + node]
            w = 1.0 / (n_trees * size)
            for j in range(size):
                W[i, members[start + j]] += w
    return W


def train_forest(x_matrix, y, n_trees: int = 500, params: Optional[TreeParams] = None,
                 bootstrap: bool = True, seed: int = 0) -> Forest:
    """Grow ``n_trees`` trees, each on its own bootstrap resample of size T.

    Per-tree seeds come from ``numpy.random.SeedSequence(seed)`` so the forest
    is reproducible and independent of growth order.
    """
    X, y = check_training_data(x_matrix, y)
    n, p = X.shape
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    if params is None:
        params = default_forest_params(p, seed)
    if n < params.min_node:
        raise ValueError(f"need at least min_node={params.min_node} rows, got {n}")
    params.resolved_features(p)
    states = np.random.SeedSequence(seed).generate_state(n_trees, dtype=np.uint32)
    trees = []
    for s in states:
        s = int(s)
        if bootstrap:
            rows = np.random.default_rng(s).integers(0, n, size=n)
        else:
            rows = np.arange(n)
        tp = TreeParams(max_depth=params.max_depth, min_node=params.min_node,
                        features_per_split=params.features_per_split, rng_seed=s)
        trees.append(grow(X, y, rows, tp))
    return Forest(trees=trees, train_response=y.copy(), n_trees=n_trees, params=params,
                  bootstrap=bootstrap, seed=seed, n_features=p)


def predict_quantile(forest: Forest, x, q: float):
    """Smallest training response whose cumulative forest weight reaches ``q``."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1 and (forest.n_features > 1 or arr.size == 1)
    out = forest.quantiles(arr.reshape(1, -1) if single else arr, [q])[:, 0]
    return float(out[0]) if single else out


class QuantileRegressionForest(RegressorMixin, BaseEstimator):
    """Estimator wrapper around :func:`train_forest`.

    ``predict`` returns the ``quantile`` level (median by default); pass
    ``q`` to query another level without refitting.
    """

    def __init__(self, n_estimators=500, max_features=None, min_samples_leaf=5,
                 max_depth=None, bootstrap=True, quantile=0.5, random_state=0):
        self.n_estimators = n_estimators
        self.max_features = max_features
        self.min_samples_leaf = min_samples_leaf
        self.max_depth = max_depth
        self.bootstrap = bootstrap
        self.quantile = quantile
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_training_data(X, y)
        p = X.shape[1]
        k = max(1, p // 3) if self.max_features is None else self.max_features
        params = TreeParams(max_depth=self.max_depth, min_node=self.min_samples_leaf,
                            features_per_split=k, rng_seed=self.random_state)
        self.forest_ = train_forest(X, y, n_trees=self.n_estimators, params=params,
                                    bootstrap=self.bootstrap, seed=self.random_state)
        self.n_features_in_ = p
        return self

    def predict(self, X, q=None):
        check_is_fitted(self, "forest_")
        q = self.quantile if q is None else q
        return self.forest_.quantiles(X, [q])[:, 0]

    def predict_quantiles(self, X, qs):
        check_is_fitted(self, "forest_")
        return self.forest_.quantiles(X, qs)
