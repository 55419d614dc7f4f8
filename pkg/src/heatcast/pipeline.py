"""End-to-end forecaster: boosted 14:00 quantile, loess 02:00 channel, adaptive intervals."""

from __future__ import annotations

from dataclasses import replace
from datetime import timedelta
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .boosting import fit_boosting
from .conformal import (
    ForecastInterval,
    ScoreModelParams,
    attach_conformal_margin,
    bonferroni_adjust,
    calibrate_am,
    calibrate_pm,
    forecast_am,
    forecast_pm,
    pm_fitted_for_frame,
)
from .smoother import pair_am_channel, predict_loess

__all__ = ["STAGES", "derive_seeds", "HeatForecaster"]

STAGES = ("boosting", "qrf_pm", "qrf_am")


def derive_seeds(seed: int) -> dict[str, int]:
    """Per-stage seeds: child ``i`` of ``SeedSequence(seed)`` for ``STAGES[i]``."""
    children = np.random.SeedSequence(int(seed)).spawn(len(STAGES))
    return {name: int(c.generate_state(1)[0] & 0x7FFFFFFF)
            for name, c in zip(STAGES, children)}


class HeatForecaster(BaseEstimator):
    """Forecast 14:00 and 02:00 temperature quantiles with adaptive intervals.

    ``fit`` takes a training frame and the frame whose 14:00 check loss picks
    the number of boosting iterations. With ``calibrated=True`` part of the
    training frame is held out from all model fitting and used to
    conformalize the intervals: the days are cut into blocks of
    ``calibration_block`` consecutive days and every ``calibration_every``-th
    block is held out, so neighbouring days (which share weather) stay on the
    same side of the split.
    """

    def __init__(self, tau=0.9, shrinkage=1e-4, max_depth=6, min_node=5,
                 max_trees=100_000, bag_fraction=1.0, loess_span=0.75, loess_degree=2,
                 qrf_n_trees=500, qrf_min_node=5, qrf_max_features=None,
                 qrf_bootstrap=True, score_predictor="fitted",
                 score_centering="process_mean", calibrated=False, calibration_every=2,
                 calibration_block=14, random_state=0):
        self.tau = tau
        self.shrinkage = shrinkage
        self.max_depth = max_depth
        self.min_node = min_node
        self.max_trees = max_trees
        self.bag_fraction = bag_fraction
        self.loess_span = loess_span
        self.loess_degree = loess_degree
        self.qrf_n_trees = qrf_n_trees
        self.qrf_min_node = qrf_min_node
        self.qrf_max_features = qrf_max_features
        self.qrf_bootstrap = qrf_bootstrap
        self.score_predictor = score_predictor
        self.score_centering = score_centering
        self.calibrated = calibrated
        self.calibration_every = calibration_every
        self.calibration_block = calibration_block
        self.random_state = random_state

    def _score_params(self, seed: int) -> ScoreModelParams:
        return ScoreModelParams(n_trees=self.qrf_n_trees, min_node=self.qrf_min_node,
                                features_per_split=self.qrf_max_features,
                                bootstrap=self.qrf_bootstrap, seed=seed,
                                score_predictor=self.score_predictor,
                                score_centering=self.score_centering)

    def fit(self, train_frame, test_frame=None):
        seeds = derive_seeds(self.random_state)
        n = len(train_frame)
        t = np.array([r.t for r in train_frame.rows])
        if self.calibrated:
            if self.calibration_every < 2 or self.calibration_block < 1:
                raise ValueError("calibration_every must be >= 2 and calibration_block >= 1")
            block = (t - 1) // self.calibration_block
            fit_rows = block % self.calibration_every != self.calibration_every - 1
        else:
            fit_rows = np.ones(n, dtype=bool)
        complete = train_frame.complete_mask
        m = complete & fit_rows
        X, y = train_frame.X[m], train_frame.y_pm[m]
        if test_frame is not None:
            X_test, y_test = test_frame.complete_rows()
        else:
            X_test = y_test = None
        ensemble = fit_boosting(X, y, X_test, y_test, tau=self.tau, shrinkage=self.shrinkage,
                                depth=self.max_depth, min_node=self.min_node,
                                max_trees=self.max_trees, bag_fraction=self.bag_fraction,
                                seed=seeds["boosting"])
        rows = fit_rows if self.calibrated else None
        pm = calibrate_pm(train_frame, ensemble, self._score_params(seeds["qrf_pm"]), rows=rows)
        am = calibrate_am(train_frame, pm, None, self._score_params(seeds["qrf_am"]),
                          span=self.loess_span, degree=self.loess_degree, rows=rows)
        if self.calibrated:
            held = complete & ~fit_rows
            pm = attach_conformal_margin(pm, ensemble.predict(train_frame.X[held]),
                                         train_frame.y_pm[held])
            pm_fit = pm_fitted_for_frame(train_frame, ensemble)
            x_am, y_am, idx = pair_am_channel(train_frame, pm_fit, min_pairs=0,
                                              return_index=True)
            cal = ~fit_rows[idx - 1]
            am_points = np.array([predict_loess(am.loess, v).value for v in x_am[cal]])
            am = attach_conformal_margin(am, am_points, y_am[cal])
        self.ensemble_ = ensemble
        self.pm_calibration_ = pm
        self.am_calibration_ = am
        self.seeds_ = seeds
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        """14:00 quantile forecasts."""
        check_is_fitted(self, "ensemble_")
        return self.ensemble_.predict(X)

    def predict_am(self, X):
        """02:00 forecasts for the night after each 14:00 forecast."""
        check_is_fitted(self, "am_calibration_")
        loess = self.am_calibration_.loess
        return np.array([predict_loess(loess, v).value for v in self.predict(X)])

    def predict_interval(self, X, alpha: float, channel: str = "PM", **kw):
        check_is_fitted(self, "ensemble_")
        if channel == "PM":
            return forecast_pm(self.pm_calibration_, X, alpha, **kw)
        if channel == "AM":
            return forecast_am(self.pm_calibration_, self.am_calibration_, X, alpha, **kw)
        raise ValueError(f"unknown channel {channel!r}")

    def forecast_frame(self, frame, alphas: Sequence[float], simultaneous: bool = False):
        """Intervals for every usable day of ``frame`` with the observed truths.

        Returns ``(intervals, truths)``. A 14:00 interval targets the row's own
        day; a 02:00 interval built from the same predictors targets the night
        of the following day. With ``simultaneous`` the requested levels are
        Bonferroni-adjusted and each interval records its family level.
        """
        check_is_fitted(self, "ensemble_")
        alphas = list(alphas)
        levels = bonferroni_adjust(alphas) if simultaneous else alphas
        X = frame.X
        ok = np.all(np.isfinite(X), axis=1)
        pos = np.flatnonzero(ok)
        dates = frame.dates
        t_idx = [frame.rows[i].t for i in pos]
        y_pm, y_am = frame.y_pm, frame.y_am
        next_am = np.array([y_am[i + 1] if i + 1 < len(frame)
                            and (dates[i + 1] - dates[i]).days == 1 else np.nan for i in pos])
        intervals: list[ForecastInterval] = []
        truths: list[float] = []
        for a, level in zip(alphas, levels):
            fam = a if simultaneous else None
            pm = forecast_pm(self.pm_calibration_, X[pos], level, t_index=t_idx,
                             dates=[dates[i] for i in pos], family_alpha=fam)
            am = forecast_am(self.pm_calibration_, self.am_calibration_, X[pos], level,
                             t_index=[t + 1 for t in t_idx],
                             dates=[dates[i] + timedelta(days=1) for i in pos],
                             family_alpha=fam)
            intervals += pm + am
            truths += list(y_pm[pos]) + list(next_am)
        return intervals, np.asarray(truths, dtype=np.float64)
