"""Input checks shared by the estimators."""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.utils.validation import check_array, check_X_y


def check_fraction(value: float, name: str, closed_right: bool = False) -> float:
    v = float(value)
    ok = 0.0 < v <= 1.0 if closed_right else 0.0 < v < 1.0
    if not ok:
        bracket = "(0, 1]" if closed_right else "(0, 1)"
        raise ValueError(f"{name} must be in {bracket}, got {value!r}")
    return v


def check_matrix(X, n_features: Optional[int] = None) -> np.ndarray:
    X = check_array(X, dtype=np.float64, order="C", ensure_2d=False)
    if X.ndim == 1:
        X = X.reshape(-1, 1) if n_features == 1 else X.reshape(1, -1)
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"expected {n_features} features, got {X.shape[1]}")
    return X


def check_training_data(X, y, n_features: Optional[int] = None):
    X, y = check_X_y(X, y, dtype=np.float64, order="C", y_numeric=True)
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"expected {n_features} features, got {X.shape[1]}")
    return np.ascontiguousarray(X), np.ascontiguousarray(y, dtype=np.float64)


def as_column(x) -> np.ndarray:
    """1-D predictor as an (n, 1) matrix."""
    a = np.asarray(x, dtype=np.float64)
    return a.reshape(-1, 1) if a.ndim <= 1 else a
