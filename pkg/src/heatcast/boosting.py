"""Quantile gradient boosting with quantile leaf updates and test-set early stopping."""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .tree import Tree, _apply, _grow
from ._validation import check_fraction, check_matrix, check_training_data

logger = logging.getLogger(__name__)

__all__ = [
    "quantile_loss",
    "loss_subgradient",
    "mean_quantile_loss",
    "lower_quantile",
    "BoostedEnsemble",
    "train",
    "fit_boosting",
    "predict",
    "QuantileBoostingRegressor",
]

ENSEMBLE_FORMAT_VERSION = 1


def quantile_loss(y, y_hat, tau: float):
    """Check (pinball) loss: tau*(y - y_hat) when y >= y_hat, else (1 - tau)*(y_hat - y)."""
    diff = np.asarray(y, dtype=np.float64) - np.asarray(y_hat, dtype=np.float64)
    out = np.where(diff >= 0, tau * diff, (tau - 1.0) * diff)
    return float(out) if out.ndim == 0 else out


def loss_subgradient(y, y_hat, tau: float):
    """Negative subgradient of the check loss in ``y_hat``; 0 at the kink."""
    diff = np.asarray(y, dtype=np.float64) - np.asarray(y_hat, dtype=np.float64)
    out = np.where(diff > 0, tau, np.where(diff < 0, tau - 1.0, 0.0))
    return float(out) if out.ndim == 0 else out


def mean_quantile_loss(y, y_hat, tau: float) -> float:
    diff = np.asarray(y, dtype=np.float64) - np.asarray(y_hat, dtype=np.float64)
    if diff.size == 0:
        return float("nan")
    return float(np.mean(np.maximum(tau * diff, (tau - 1.0) * diff)))


def lower_quantile(values, tau: float) -> float:
    """Order statistic ``ceil(tau * n)``, an exact minimiser of the summed check loss."""
    a = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if a.size == 0:
        raise ValueError("quantile of an empty sequence")
    k = int(np.ceil(tau * a.size - 1e-12))
    return float(a[max(k, 1) - 1])


@njit(cache=True)
def _leaf_quantiles(resid, members, leaf_start, leaf_size, feature, tau):
    n_nodes = feature.shape[0]
    out = np.zeros(n_nodes)
    for node in range(n_nodes):
        if feature[node] >= 0:
            continue
        size = leaf_size[node]
        s = leaf_start[node]
        vals = np.empty(size)
        for i in range(size):
            vals[i] = resid[members[s + i]]
        vals.sort()
        k = int(np.ceil(tau * size - 1e-12))
        if k < 1:
            k = 1
        out[node] = vals[k - 1]
    return out


@dataclass(eq=False)
class BoostedEnsemble:
    """Fitted quantile boosting model.

    Loss curves have ``len(trees) + 1`` entries; index ``m`` is the mean check
    loss after ``m`` trees (index 0 is the constant initial fit).
    """

    init_value: float
    trees: list[Tree]
    shrinkage: float
    tau: float
    best_iter: int
    train_loss_curve: np.ndarray
    test_loss_curve: np.ndarray
    n_features: int = 8
    params: dict = field(default_factory=dict)

    def predict(self, X, n_iter: Optional[int] = None) -> np.ndarray:
        X = check_matrix(X, n_features=self.n_features)
        n_iter = self.best_iter if n_iter is None else int(n_iter)
        if n_iter < 0 or n_iter > len(self.trees):
            raise ValueError(f"n_iter={n_iter} outside 0..{len(self.trees)}")
        out = np.full(X.shape[0], self.init_value, dtype=np.float64)
        for tree in self.trees[:n_iter]:
            out += self.shrinkage * tree.value[_apply(X, tree.feature, tree.threshold,
                                                      tree.left, tree.right)]
        return out

    def to_dict(self, max_trees: Optional[int] = None, include_members: bool = False) -> dict:
        """Versioned JSON document; ``max_trees`` truncates the stored tree list."""
        n = len(self.trees) if max_trees is None else min(max_trees, len(self.trees))
        return {
            "format": "heatcast.boosted_ensemble",
            "version": ENSEMBLE_FORMAT_VERSION,
            "init": float(self.init_value),
            "shrinkage": float(self.shrinkage),
            "tau": float(self.tau),
            "best_iter": int(self.best_iter),
            "n_features": int(self.n_features),
            "n_trees_trained": len(self.trees),
            "params": self.params,
            "trees": [t.to_dict(include_members=include_members) for t in self.trees[:n]],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoostedEnsemble":
        if d.get("format") != "heatcast.boosted_ensemble":
            raise ValueError("not a serialized boosted ensemble")
        if d.get("version") != ENSEMBLE_FORMAT_VERSION:
            raise ValueError(f"unsupported ensemble version {d.get('version')}")
        trees = [Tree.from_dict(t) for t in d["trees"]]
        best = int(d["best_iter"])
        if best > len(trees):
            raise ValueError("serialized ensemble is truncated below best_iter")
        return cls(init_value=float(d["init"]), trees=trees,
                   shrinkage=float(d["shrinkage"]), tau=float(d["tau"]),
                   best_iter=best, train_loss_curve=np.empty(0),
                   test_loss_curve=np.empty(0), n_features=int(d["n_features"]),
                   params=dict(d.get("params", {})))

    def to_json(self, path, **kw) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(**kw), fh, separators=(",", ":"))

    @classmethod
    def from_json(cls, path) -> "BoostedEnsemble":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def loss_curve_csv(self, which: str = "train") -> str:
        curve = self.train_loss_curve if which == "train" else self.test_loss_curve
        lines = ["iteration,loss"]
        lines += [f"{i},{'' if not np.isfinite(v) else repr(float(v))}"
                  for i, v in enumerate(curve)]
        return "\n".join(lines) + "\n"


def fit_boosting(X, y, X_test=None, y_test=None, *, tau: float = 0.9,
                 shrinkage: float = 1e-4, depth: int = 6, min_node: int = 5,
                 max_trees: int = 100_000, bag_fraction: float = 1.0,
                 seed: int = 0) -> BoostedEnsemble:
    """Stagewise quantile boosting on arrays.

    Each iteration fits a depth-limited tree to the check-loss subgradient,
    replaces every leaf value by the ``tau``-quantile of the raw residuals of
    its members and adds ``shrinkage`` times the tree. ``best_iter`` is the
    smallest minimiser of the test loss curve.
    """
    check_fraction(tau, "tau")
    if shrinkage <= 0:
        raise ValueError("shrinkage must be > 0")
    if max_trees < 1:
        raise ValueError("max_trees must be >= 1")
    if not 0.0 < bag_fraction <= 1.0:
        raise ValueError("bag_fraction must be in (0, 1]")
    X, y = check_training_data(X, y)
    n, p = X.shape
    have_test = X_test is not None and len(X_test) > 0
    if have_test:
        X_test, y_test = check_training_data(X_test, y_test, n_features=p)
    else:
        warnings.warn("no test rows supplied; best_iter falls back to max_trees",
                      RuntimeWarning, stacklevel=2)
        X_test = np.empty((0, p))
        y_test = np.empty(0)

    init = lower_quantile(y, tau)
    F = np.full(n, init)
    F_test = np.full(X_test.shape[0], init)
    train_curve = np.empty(max_trees + 1)
    test_curve = np.full(max_trees + 1, np.nan)
    train_curve[0] = mean_quantile_loss(y, F, tau)
    if have_test:
        test_curve[0] = mean_quantile_loss(y_test, F_test, tau)

    rng = np.random.default_rng(seed)
    tree_seeds = rng.integers(0, 2**31 - 1, size=max_trees)
    n_bag = max(1, int(np.floor(bag_fraction * n)))
    all_rows = np.arange(n, dtype=np.int32)
    tau_m1 = tau - 1.0
    trees: list[Tree] = []
    for m in range(max_trees):
        resid = y - F
        grad = np.where(resid > 0, tau, np.where(resid < 0, tau_m1, 0.0))
        if n_bag < n:
            rows = np.sort(rng.choice(n, size=n_bag, replace=False)).astype(np.int32)
        else:
            rows = all_rows
        arrays = _grow(X, grad, rows, depth, min_node, p, int(tree_seeds[m]))
        feature, threshold, left, right, _, leaf_start, leaf_size, members = arrays
        value = _leaf_quantiles(resid, members, leaf_start, leaf_size, feature, tau)
        tree = Tree(feature, threshold, left, right, value, leaf_start, leaf_size, members)
        trees.append(tree)
        F += shrinkage * value[_apply(X, feature, threshold, left, right)]
        train_curve[m + 1] = np.mean(np.maximum(tau * (y - F), tau_m1 * (y - F)))
        if have_test:
            F_test += shrinkage * value[_apply(X_test, feature, threshold, left, right)]
            d = y_test - F_test
            test_curve[m + 1] = np.mean(np.maximum(tau * d, tau_m1 * d))

    best = int(np.argmin(test_curve)) if have_test else max_trees
    params = dict(tau=tau, shrinkage=shrinkage, depth=depth, min_node=min_node,
                  max_trees=max_trees, bag_fraction=bag_fraction, seed=seed)
    logger.info("boosting: %d trees, best_iter=%d", max_trees, best)
    return BoostedEnsemble(init_value=init, trees=trees, shrinkage=shrinkage, tau=tau,
                           best_iter=best, train_loss_curve=train_curve,
                           test_loss_curve=test_curve, n_features=p, params=params)


def train(train_frame, test_frame, tau: float = 0.9, shrinkage: float = 1e-4,
          depth: int = 6, min_node: int = 5, max_trees: int = 100_000,
          seed: int = 0, bag_fraction: float = 1.0) -> BoostedEnsemble:
    """Fit the 14:00 channel on the complete rows of two supervised frames."""
    X, y = train_frame.complete_rows()
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite response in training frame")
    X_test, y_test = (None, None) if test_frame is None else test_frame.complete_rows()
    return fit_boosting(X, y, X_test, y_test, tau=tau, shrinkage=shrinkage, depth=depth,
                        min_node=min_node, max_trees=max_trees,
                        bag_fraction=bag_fraction, seed=seed)


def predict(ensemble: BoostedEnsemble, x, n_iter: Optional[int] = None):
    """Ensemble prediction for one vector (returns float) or a matrix."""
    arr = np.asarray(x, dtype=np.float64)
    out = ensemble.predict(arr.reshape(1, -1) if arr.ndim == 1 else arr, n_iter=n_iter)
    return float(out[0]) if arr.ndim == 1 else out


class QuantileBoostingRegressor(RegressorMixin, BaseEstimator):
    """Estimator wrapper around :func:`fit_boosting`.

    ``fit`` accepts an optional ``eval_set=(X_test, y_test)`` that drives the
    early-stopping choice of ``best_iter_``. ``score`` returns the negative
    mean check loss so that larger is better.
    """

    def __init__(self, tau=0.9, shrinkage=1e-4, max_depth=6, min_node=5,
                 max_trees=100_000, bag_fraction=1.0, random_state=0):
        self.tau = tau
        self.shrinkage = shrinkage
        self.max_depth = max_depth
        self.min_node = min_node
        self.max_trees = max_trees
        self.bag_fraction = bag_fraction
        self.random_state = random_state

    def fit(self, X, y, eval_set=None):
        X_test, y_test = (None, None) if eval_set is None else eval_set
        self.ensemble_ = fit_boosting(
            X, y, X_test, y_test, tau=self.tau, shrinkage=self.shrinkage,
            depth=self.max_depth, min_node=self.min_node, max_trees=self.max_trees,
            bag_fraction=self.bag_fraction, seed=self.random_state,
        )
        self.best_iter_ = self.ensemble_.best_iter
        self.n_features_in_ = self.ensemble_.n_features
        return self

    def predict(self, X, n_iter=None):
        check_is_fitted(self, "ensemble_")
        return self.ensemble_.predict(X, n_iter=n_iter)

    def score(self, X, y, sample_weight=None):
        return -mean_quantile_loss(y, self.predict(X), self.tau)
