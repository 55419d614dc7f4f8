"""Local polynomial (loess) smoothing with tricube weights.

Used for the 02:00 channel, which regresses the night temperature on the
previous afternoon's fitted 14:00 value, and for the smoothed curves in the
plot-data exports. No robustness iterations are performed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_fraction

__all__ = [
    "LoessModel",
    "LoessPrediction",
    "fit_loess",
    "constant_loess",
    "predict_loess",
    "pair_am_channel",
    "LoessRegressor",
]


@dataclass(frozen=True, eq=False)
class LoessModel:
    x_train: np.ndarray
    y_train: np.ndarray
    span: float = 0.75
    degree: int = 2

    @property
    def n_neighbors(self) -> int:
        n = self.x_train.shape[0]
        q = max(math.ceil(self.span * n - 1e-9), self.degree + 2)
        return min(q, n)

    def to_dict(self) -> dict:
        return {"format": "heatcast.loess", "span": self.span, "degree": self.degree,
                "x": [float(v) for v in self.x_train], "y": [float(v) for v in self.y_train]}

    @classmethod
    def from_dict(cls, d: dict) -> "LoessModel":
        if d.get("format") != "heatcast.loess":
            raise ValueError("not a serialized loess model")
        x = np.asarray(d["x"], dtype=np.float64)
        y = np.asarray(d["y"], dtype=np.float64)
        if x.shape != y.shape or np.any(np.diff(x) < 0):
            raise ValueError("serialized loess pairs must be aligned and sorted by x")
        # stored models may be degenerate (see constant_loess), so no refit
        return cls(x, y, float(d["span"]), int(d["degree"]))

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(), fh, separators=(",", ":"))

    @classmethod
    def from_json(cls, path) -> "LoessModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class LoessPrediction:
    value: float
    slope: float
    extrapolated: bool


def fit_loess(x, y, span: float = 0.75, degree: int = 2) -> LoessModel:
    """Store the training pairs sorted by ``x``; fits are computed per query."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError("x and y must have the same length")
    if degree not in (1, 2):
        raise ValueError(f"degree must be 1 or 2, got {degree}")
    check_fraction(span, "span", closed_right=True)
    if x.size < degree + 2:
        raise ValueError(f"need at least {degree + 2} points for degree {degree}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("loess inputs must be finite")
    if np.unique(x).size < degree + 2:
        raise ValueError("x has too few distinct values for a local fit")
    order = np.argsort(x, kind="mergesort")
    return LoessModel(x[order], y[order], float(span), int(degree))


def constant_loess(x, y, span: float = 0.75, degree: int = 2) -> LoessModel:
    """Model for a predictor with too few distinct values to fit.

    Queries then return the (tricube-weighted) local mean with zero slope.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape or x.size == 0:
        raise ValueError("x and y must be aligned and non-empty")
    order = np.argsort(x, kind="mergesort")
    return LoessModel(x[order], y[order], float(span), int(degree))


def _local_fit(model: LoessModel, x0: float) -> tuple[float, float]:
    """Value and slope at ``x0`` of the tricube-weighted local polynomial.

    Rank-deficient neighbourhoods (too few distinct x) get the minimum-norm
    solution, so a constant predictor yields the local mean with zero slope.
    """
    x, y = model.x_train, model.y_train
    d = np.abs(x - x0)
    q = model.n_neighbors
    d_max = np.partition(d, q - 1)[q - 1]
    # distance ties at the boundary are all included (they get zero weight anyway)
    if d_max > 0:
        mask = d <= d_max
        w = (1.0 - (d[mask] / d_max) ** 3) ** 3
        scale = d_max
    else:
        mask = d == 0
        w = np.ones(int(mask.sum()))
        scale = 1.0
    u = (x[mask] - x0) / scale
    A = np.vander(u, model.degree + 1, increasing=True)
    sw = np.sqrt(w)
    beta, *_ = np.linalg.lstsq(A * sw[:, None], y[mask] * sw, rcond=None)
    slope = beta[1] / scale if beta.size > 1 else 0.0
    return float(beta[0]), float(slope)


def predict_loess(model: LoessModel, x0: float) -> LoessPrediction:
    """Loess value at ``x0``.

    Outside the training range the local fit at the nearest end point is
    extended linearly from its value and slope there, and the result is
    flagged as extrapolated.
    """
    x0 = float(x0)
    lo, hi = float(model.x_train[0]), float(model.x_train[-1])
    if lo <= x0 <= hi:
        v, s = _local_fit(model, x0)
        return LoessPrediction(v, s, False)
    xb = lo if x0 < lo else hi
    v, s = _local_fit(model, xb)
    return LoessPrediction(v + s * (x0 - xb), s, True)


def pair_am_channel(frame, pm_fitted, min_pairs: int = 10, return_index: bool = False):
    """Pair the fitted 14:00 value of day t-1 with the observed 02:00 value of day t.

    Days whose 02:00 reading or previous-day fit is missing are dropped.
    With ``return_index`` the row positions (in ``frame``) of the 02:00 days
    are returned as a third array.
    """
    pm_fitted = np.asarray(pm_fitted, dtype=np.float64)
    if pm_fitted.shape[0] != len(frame):
        raise ValueError("pm_fitted must be aligned with the frame rows")
    y_am = frame.y_am
    dates = frame.dates
    xs, ys, idx = [], [], []
    for i in range(1, len(frame)):
        if (dates[i] - dates[i - 1]).days != 1:
            continue
        if np.isfinite(pm_fitted[i - 1]) and np.isfinite(y_am[i]):
            xs.append(pm_fitted[i - 1])
            ys.append(y_am[i])
            idx.append(i)
    if len(xs) < min_pairs:
        raise ValueError(f"only {len(xs)} usable 02:00 pairs (need {min_pairs})")
    out = (np.asarray(xs), np.asarray(ys))
    return out + (np.asarray(idx, dtype=np.int64),) if return_index else out


class LoessRegressor(RegressorMixin, BaseEstimator):
    """One-predictor loess as an estimator; ``predict`` also accepts 1-D input."""

    def __init__(self, span=0.75, degree=2):
        self.span = span
        self.degree = degree

    def fit(self, X, y):
        x = np.asarray(X, dtype=np.float64)
        if x.ndim == 2:
            if x.shape[1] != 1:
                raise ValueError("LoessRegressor takes a single predictor")
            x = x[:, 0]
        self.model_ = fit_loess(x, y, span=self.span, degree=self.degree)
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        x = np.asarray(X, dtype=np.float64).reshape(-1)
        return np.array([predict_loess(self.model_, v).value for v in x])

    def predict_flagged(self, X):
        """(values, extrapolated) arrays."""
        check_is_fitted(self, "model_")
        preds = [predict_loess(self.model_, v) for v in np.asarray(X, dtype=np.float64).reshape(-1)]
        return (np.array([p.value for p in preds]),
                np.array([p.extrapolated for p in preds], dtype=bool))
