"""AR(1) residual whitening and Ljung-Box whiteness checks."""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.special import gammaincc

logger = logging.getLogger(__name__)

__all__ = [
    "Ar1Model",
    "WhitenessReport",
    "fit_ar1",
    "ljung_box",
    "chi2_sf",
    "whiteness_test",
    "default_max_lag",
    "whiten",
]

WHITENESS_LEVEL = 0.05


@dataclass(frozen=True, eq=False)
class Ar1Model:
    """Conditional least-squares AR(1): r_t = intercept + phi * r_{t-1} + e_t."""

    phi: float
    intercept: float
    residuals: np.ndarray
    n_used: int

    @property
    def process_mean(self) -> float:
        """Stationary mean intercept / (1 - phi)."""
        return self.intercept / (1.0 - self.phi)

    def to_dict(self) -> dict:
        return {"phi": self.phi, "intercept": self.intercept, "n_used": self.n_used,
                "process_mean": self.process_mean}


@dataclass(frozen=True)
class WhitenessReport:
    ljung_box_stat: float
    lags_tested: int
    p_value: float
    lag1_autocorr: float
    passed: bool
    df: int = 0
    series: str = "raw"

    def to_dict(self) -> dict:
        return asdict(self)


def fit_ar1(r) -> Ar1Model:
    """Regress r_t on r_{t-1} (first observation dropped)."""
    r = np.asarray(r, dtype=np.float64).ravel()
    if r.size < 20:
        raise ValueError(f"AR(1) fit needs at least 20 observations, got {r.size}")
    if not np.all(np.isfinite(r)):
        raise ValueError("AR(1) input must be finite")
    if np.ptp(r) == 0:
        raise ValueError("AR(1) input has zero variance")
    prev, cur = r[:-1], r[1:]
    pm, cm = prev.mean(), cur.mean()
    sxx = np.sum((prev - pm) ** 2)
    if sxx == 0:
        raise ValueError("lagged series has zero variance")
    phi = float(np.sum((prev - pm) * (cur - cm)) / sxx)
    intercept = float(cm - phi * pm)
    eps = cur - intercept - phi * prev
    if abs(phi) >= 1:
        warnings.warn(f"AR(1) coefficient {phi:.3f} is not stationary", RuntimeWarning,
                      stacklevel=2)
    return Ar1Model(phi=phi, intercept=intercept, residuals=eps, n_used=int(eps.size))


def _autocorr(e: np.ndarray, max_lag: int) -> np.ndarray:
    d = e - e.mean()
    denom = np.dot(d, d)
    if denom == 0:
        return np.zeros(max_lag)
    return np.array([np.dot(d[:-k], d[k:]) / denom for k in range(1, max_lag + 1)])


def chi2_sf(stat: float, df: int) -> float:
    """Upper tail of the chi-square distribution via the regularized gamma function."""
    if stat <= 0:
        return 1.0
    return float(gammaincc(df / 2.0, stat / 2.0))


def ljung_box(e, max_lag: int) -> float:
    e = np.asarray(e, dtype=np.float64).ravel()
    n = e.size
    rho = _autocorr(e, max_lag)
    k = np.arange(1, max_lag + 1)
    return float(n * (n + 2) * np.sum(rho ** 2 / (n - k)))


def default_max_lag(n: int) -> int:
    return max(1, min(20, n // 5))


def whiteness_test(eps, max_lag: Optional[int] = None, n_params: int = 1,
                   level: float = WHITENESS_LEVEL, series: str = "raw") -> WhitenessReport:
    """Ljung-Box portmanteau test over lags 1..max_lag.

    The chi-square reference has ``max_lag - n_params`` degrees of freedom
    (never fewer than one). ``passed`` means the p-value exceeds ``level``.
    """
    e = np.asarray(eps, dtype=np.float64).ravel()
    if max_lag is None:
        max_lag = default_max_lag(e.size)
    if not 1 <= max_lag < e.size:
        raise ValueError(f"need 1 <= max_lag < n, got max_lag={max_lag}, n={e.size}")
    df = max(1, max_lag - n_params)
    if np.ptp(e) == 0:
        # a constant series carries no serial dependence
        return WhitenessReport(0.0, max_lag, 1.0, 0.0, True, df, series)
    q = ljung_box(e, max_lag)
    p = min(1.0, max(0.0, chi2_sf(q, df)))
    rho1 = float(_autocorr(e, 1)[0])
    return WhitenessReport(q, max_lag, p, rho1, p > level, df, series)


def whiten(r, max_lag: Optional[int] = None, level: float = WHITENESS_LEVEL):
    """Return (scores, model, report).

    A raw series that already passes the whiteness test is returned as is with
    ``model=None``. Otherwise AR(1) innovations are returned; if those still
    fail, ``report.passed`` is False and the caller must surface the warning.
    """
    r = np.asarray(r, dtype=np.float64).ravel()
    raw = whiteness_test(r, max_lag, n_params=0, level=level, series="raw")
    if raw.passed:
        return r.copy(), None, raw
    model = fit_ar1(r)
    rep = whiteness_test(model.residuals, max_lag if max_lag is None else min(max_lag, model.n_used - 1),
                         n_params=1, level=level, series="ar1")
    if not rep.passed:
        logger.warning("AR(1) innovations still fail the whiteness test (p=%.4f)", rep.p_value)
    return model.residuals.copy(), model, rep
