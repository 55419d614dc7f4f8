"""Nonconformity scores, quantile-forest score models and adaptive intervals.

The 14:00 channel scores are the (whitened) residuals of the boosting fit;
the 02:00 channel scores are the (whitened) residuals of the loess fit of the
night temperature on the previous afternoon's fitted value. A quantile
regression forest models each channel's scores as a function of one
predictor, and an interval for a new case is the point forecast plus the
forest's alpha/2 and 1 - alpha/2 score quantiles at that forecast.

Optionally a held-out calibration set widens or narrows those intervals by
the usual conformalized-quantile-regression margin.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from datetime import date
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .boosting import BoostedEnsemble
from .forest import Forest, train_forest
from .smoother import LoessModel, constant_loess, fit_loess, pair_am_channel, predict_loess
from .tree import TreeParams
from .tsdiag import Ar1Model, WhitenessReport, whiten
from ._validation import check_fraction

__all__ = [
    "ScoreModelParams",
    "ConformalMargin",
    "ChannelCalibration",
    "ForecastInterval",
    "ProbabilityRange",
    "calibrate_pm",
    "calibrate_am",
    "attach_conformal_margin",
    "forecast_pm",
    "forecast_am",
    "bonferroni_adjust",
    "lower_bound_exceedance",
    "pm_fitted_for_frame",
    "INTERVAL_COLUMNS",
    "intervals_to_csv",
    "calibration_to_dict",
    "calibration_from_dict",
    "read_intervals_csv",
]

SCORE_PREDICTORS = ("fitted", "observed")
SCORE_CENTERINGS = ("process_mean", "none")


@dataclass(frozen=True)
class ScoreModelParams:
    """Settings for the per-channel score forests and score construction.

    ``score_predictor`` picks the forest predictor for the 14:00 channel:
    the fitted value (matches what is available when forecasting) or the
    observed temperature. ``score_centering="process_mean"`` adds the AR(1)
    stationary mean back to the innovations so scores keep the location of
    the residuals they replace.
    """

    n_trees: int = 500
    min_node: int = 5
    max_depth: Optional[int] = None
    features_per_split: Optional[int] = None
    bootstrap: bool = True
    seed: int = 0
    score_predictor: str = "fitted"
    score_centering: str = "process_mean"
    max_lag: Optional[int] = None

    def __post_init__(self):
        if self.score_predictor not in SCORE_PREDICTORS:
            raise ValueError(f"score_predictor must be one of {SCORE_PREDICTORS}")
        if self.score_centering not in SCORE_CENTERINGS:
            raise ValueError(f"score_centering must be one of {SCORE_CENTERINGS}")

    def tree_params(self, seed: int) -> TreeParams:
        return TreeParams(max_depth=self.max_depth, min_node=self.min_node,
                          features_per_split=self.features_per_split, rng_seed=seed)


@dataclass(frozen=True, eq=False)
class ConformalMargin:
    """Held-out points used to conformalize the forest intervals."""

    points: np.ndarray
    truths: np.ndarray

    def margin(self, score_model: Forest, alpha: float) -> float:
        n = self.points.size
        k = math.ceil((1.0 - alpha) * (n + 1))
        if k > n:
            return math.inf
        q = score_model.quantiles(self.points.reshape(-1, 1), [alpha / 2, 1 - alpha / 2])
        lo = self.points + q[:, 0]
        hi = self.points + q[:, 1]
        e = np.maximum(lo - self.truths, self.truths - hi)
        return float(np.sort(e)[k - 1])

    def to_dict(self) -> dict:
        return {"points": [float(v) for v in self.points],
                "truths": [float(v) for v in self.truths]}

    @classmethod
    def from_dict(cls, d: dict) -> "ConformalMargin":
        return cls(np.asarray(d["points"], dtype=np.float64),
                   np.asarray(d["truths"], dtype=np.float64))


@dataclass(eq=False)
class ChannelCalibration:
    channel: str
    scores: np.ndarray
    score_inputs: np.ndarray
    score_model: Forest
    score_predictor_kind: str
    ensemble: BoostedEnsemble
    whiteness: WhitenessReport
    ar1: Optional[Ar1Model] = None
    score_offset: float = 0.0
    loess: Optional[LoessModel] = None
    fitted: Optional[np.ndarray] = None
    conformal: Optional[ConformalMargin] = None
    notes: list[str] = field(default_factory=list)

    @property
    def validity_warning(self) -> str:
        if self.whiteness.passed:
            return ""
        return (f"{self.channel} scores fail the whiteness test "
                f"(Ljung-Box p={self.whiteness.p_value:.4g}); exchangeability not supported")

    def score_quantiles(self, inputs, alpha: float) -> np.ndarray:
        return self.score_model.quantiles(np.asarray(inputs, dtype=np.float64).reshape(-1, 1),
                                          [alpha / 2, 1 - alpha / 2])

    def summary(self) -> dict:
        s = self.scores
        return {
            "channel": self.channel,
            "n_scores": int(s.size),
            "score_predictor": self.score_predictor_kind,
            "score_offset": self.score_offset,
            "score_min": float(s.min()), "score_mean": float(s.mean()),
            "score_max": float(s.max()),
            "whiteness": self.whiteness.to_dict(),
            "ar1": None if self.ar1 is None else self.ar1.to_dict(),
            "conformal_calibration_points": 0 if self.conformal is None
            else int(self.conformal.points.size),
            "validity_warning": self.validity_warning,
            "notes": list(self.notes),
        }


@dataclass(frozen=True)
class ForecastInterval:
    t_index: int
    point: float
    lower: float
    upper: float
    alpha: float
    channel: str = "PM"
    date: Optional[date] = None
    extrapolated: bool = False
    validity_warning: str = ""
    family_alpha: Optional[float] = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if self.lower > self.upper:
            raise ValueError("interval lower bound exceeds upper bound")

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def covers(self, truth: float) -> bool:
        return self.lower <= truth <= self.upper


class ProbabilityRange(NamedTuple):
    """Exceedance probability known only to lie in (low, high)."""

    low: float
    high: float


def _scores(residuals: np.ndarray, params: ScoreModelParams):
    scores, model, report = whiten(residuals, max_lag=params.max_lag)
    offset = 0.0
    if model is not None and params.score_centering == "process_mean":
        offset = model.process_mean
        scores = scores + offset
    return scores, model, report, offset


def pm_fitted_for_frame(frame, ensemble: BoostedEnsemble) -> np.ndarray:
    """Ensemble fit for every frame row that has a full predictor vector (NaN elsewhere)."""
    X = frame.X
    ok = np.all(np.isfinite(X), axis=1)
    out = np.full(len(frame), np.nan)
    if ok.any():
        out[ok] = ensemble.predict(X[ok])
    return out


def calibrate_pm(train_frame, ensemble: BoostedEnsemble,
                 params: ScoreModelParams = ScoreModelParams(), rows=None) -> ChannelCalibration:
    """Scores and score forest for the 14:00 channel.

    ``rows`` optionally restricts calibration to a boolean mask over the frame
    (used when part of the year is held out for conformal adjustment).
    """
    mask = train_frame.complete_mask
    if rows is not None:
        mask = mask & np.asarray(rows, dtype=bool)
    X = train_frame.X[mask]
    y = train_frame.y_pm[mask]
    fitted = ensemble.predict(X)
    r = y - fitted
    scores, ar1, report, offset = _scores(r, params)
    k = r.size - scores.size
    inputs = (fitted if params.score_predictor == "fitted" else y)[k:]
    forest = train_forest(inputs.reshape(-1, 1), scores, n_trees=params.n_trees,
                          params=params.tree_params(params.seed), bootstrap=params.bootstrap,
                          seed=params.seed)
    notes = []
    if ar1 is not None:
        notes.append(f"AR(1) whitening applied (phi={ar1.phi:.4f}); the transform is not "
                     "inverted at forecast time")
    if params.score_predictor == "observed":
        notes.append("score forest trained on observed 14:00 temperatures but queried at "
                     "the point forecast")
    all_fitted = np.full(len(train_frame), np.nan)
    all_fitted[mask] = fitted
    return ChannelCalibration("PM", scores, inputs, forest, params.score_predictor, ensemble,
                              report, ar1, offset, None, all_fitted, None, notes)


def calibrate_am(train_frame, pm_calib: ChannelCalibration,
                 loess_model: Optional[LoessModel] = None,
                 params: ScoreModelParams = ScoreModelParams(),
                 span: float = 0.75, degree: int = 2, rows=None) -> ChannelCalibration:
    """Scores and score forest for the 02:00 channel.

    Pairs are (fitted 14:00 of day t-1, observed 02:00 of day t). ``rows``
    restricts, by the 14:00 day t-1, which pairs are used. When no loess model
    is given one is fitted on those pairs. The 02:00 forest is always trained
    on the fitted 02:00 value, whatever ``params.score_predictor`` says.
    """
    if pm_calib.channel != "PM":
        raise ValueError("calibrate_am needs the 14:00 calibration")
    pm_fitted = pm_fitted_for_frame(train_frame, pm_calib.ensemble)
    x, y, idx = pair_am_channel(train_frame, pm_fitted, return_index=True,
                                min_pairs=0 if rows is not None else 10)
    if rows is not None:
        keep = np.asarray(rows, dtype=bool)[idx - 1]
        x, y, idx = x[keep], y[keep], idx[keep]
        if x.size < 10:
            raise ValueError(f"only {x.size} usable 02:00 pairs (need 10)")
    notes = []
    if loess_model is None:
        if np.unique(x).size < degree + 2:
            loess_model = constant_loess(x, y, span=span, degree=degree)
            notes.append("fitted 14:00 values are (nearly) constant; the 02:00 loess "
                         "degenerates to a local mean")
        else:
            loess_model = fit_loess(x, y, span=span, degree=degree)
    fitted = np.array([predict_loess(loess_model, v).value for v in x])
    r = y - fitted
    scores, ar1, report, offset = _scores(r, params)
    k = r.size - scores.size
    inputs = fitted[k:]
    forest = train_forest(inputs.reshape(-1, 1), scores, n_trees=params.n_trees,
                          params=params.tree_params(params.seed),
                          bootstrap=params.bootstrap, seed=params.seed)
    if ar1 is not None:
        notes.append(f"AR(1) whitening applied (phi={ar1.phi:.4f}); the transform is not "
                     "inverted at forecast time")
    all_fitted = np.full(len(train_frame), np.nan)
    all_fitted[idx] = fitted
    return ChannelCalibration("AM", scores, inputs, forest, "fitted", pm_calib.ensemble,
                              report, ar1, offset, loess_model, all_fitted, None, notes)


def attach_conformal_margin(calib: ChannelCalibration, points, truths) -> ChannelCalibration:
    """Copy of ``calib`` that conformalizes its intervals on held-out (point, truth) pairs."""
    points = np.asarray(points, dtype=np.float64).ravel()
    truths = np.asarray(truths, dtype=np.float64).ravel()
    if points.shape != truths.shape or points.size == 0:
        raise ValueError("calibration points and truths must be aligned and non-empty")
    return replace(calib, conformal=ConformalMargin(points, truths))


def _build_intervals(calib: ChannelCalibration, points: np.ndarray, alpha: float,
                     extrapolated: np.ndarray, t_index: Sequence[int],
                     dates: Optional[Sequence[date]], family_alpha: Optional[float]):
    q = calib.score_quantiles(points, alpha)
    lower = points + q[:, 0]
    upper = points + q[:, 1]
    if calib.conformal is not None:
        m = calib.conformal.margin(calib.score_model, alpha)
        # a negative margin may shrink the interval but never invert it
        m = np.maximum(m, -(upper - lower) / 2.0)
        lower = lower - m
        upper = upper + m
    warn = calib.validity_warning
    out = []
    for i in range(points.size):
        out.append(ForecastInterval(
            t_index=int(t_index[i]), point=float(points[i]), lower=float(lower[i]),
            upper=float(upper[i]), alpha=float(alpha), channel=calib.channel,
            date=None if dates is None else dates[i], extrapolated=bool(extrapolated[i]),
            validity_warning=warn, family_alpha=family_alpha,
        ))
    return out


def _prep(x_new):
    X = np.asarray(x_new, dtype=np.float64)
    single = X.ndim == 1
    return (X.reshape(1, -1) if single else X), single


def forecast_pm(calib: ChannelCalibration, x_new, alpha: float, t_index=None, dates=None,
                family_alpha: Optional[float] = None):
    """Interval for the 14:00 temperature of one case (vector) or many (matrix)."""
    check_fraction(alpha, "alpha")
    if calib.channel != "PM":
        raise ValueError("forecast_pm needs the 14:00 calibration")
    X, single = _prep(x_new)
    points = calib.ensemble.predict(X)
    idx = np.arange(1, X.shape[0] + 1) if t_index is None else np.atleast_1d(t_index)
    out = _build_intervals(calib, points, alpha, np.zeros(X.shape[0], bool), idx,
                           dates, family_alpha)
    return out[0] if single else out


def forecast_am(pm_calib: ChannelCalibration, am_calib: ChannelCalibration, x_new,
                alpha: float, t_index=None, dates=None, family_alpha: Optional[float] = None):
    """Interval for the 02:00 temperature following the 14:00 forecast of ``x_new``.

    The point is the loess value at the boosted 14:00 forecast; intervals are
    flagged as extrapolated when that forecast lies outside the loess range.
    """
    check_fraction(alpha, "alpha")
    if am_calib.channel != "AM" or am_calib.loess is None:
        raise ValueError("forecast_am needs the 02:00 calibration")
    X, single = _prep(x_new)
    pm_points = pm_calib.ensemble.predict(X)
    preds = [predict_loess(am_calib.loess, v) for v in pm_points]
    points = np.array([p.value for p in preds])
    extrap = np.array([p.extrapolated for p in preds], dtype=bool)
    idx = np.arange(1, X.shape[0] + 1) if t_index is None else np.atleast_1d(t_index)
    out = _build_intervals(am_calib, points, alpha, extrap, idx, dates, family_alpha)
    return out[0] if single else out


def bonferroni_adjust(alphas: Sequence[float], global_alpha: Optional[float] = None) -> list[float]:
    """Per-query levels for m simultaneous coverage queries.

    With ``global_alpha`` every query gets ``global_alpha / m``; without it
    each requested level is divided by m.
    """
    alphas = list(alphas)
    if not alphas:
        raise ValueError("alphas must be non-empty")
    m = len(alphas)
    if global_alpha is not None:
        check_fraction(global_alpha, "global_alpha")
        return [global_alpha / m] * m
    return [check_fraction(a, "alpha") / m for a in alphas]


def lower_bound_exceedance(interval: ForecastInterval, threshold: float):
    """Probability that the truth exceeds ``threshold`` implied by a symmetric-tail interval.

    At or below the lower bound this is 1 - alpha/2; above the upper bound it
    is alpha/2; in between only the range (alpha/2, 1 - alpha/2) is implied.
    """
    half = interval.alpha / 2.0
    if threshold <= interval.lower:
        return 1.0 - half
    if threshold > interval.upper:
        return half
    return ProbabilityRange(half, 1.0 - half)


INTERVAL_COLUMNS = ("t_index", "date", "channel", "alpha", "point", "lower", "upper",
                    "extrapolated", "validity_warning")


def intervals_to_csv(intervals: Sequence[ForecastInterval], path_or_buf=None) -> str:
    """Write intervals in the fixed column order; floats round-trip exactly."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(INTERVAL_COLUMNS)
    for iv in intervals:
        w.writerow([iv.t_index, "" if iv.date is None else iv.date.isoformat(), iv.channel,
                    repr(iv.alpha), repr(iv.point), repr(iv.lower), repr(iv.upper),
                    int(iv.extrapolated), iv.validity_warning])
    text = out.getvalue()
    if path_or_buf is not None:
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(text)
        else:
            with open(path_or_buf, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
    return text


def read_intervals_csv(path_or_buf) -> list[ForecastInterval]:
    if hasattr(path_or_buf, "read"):
        text = path_or_buf.read()
    else:
        with open(path_or_buf, encoding="utf-8", newline="") as fh:
            text = fh.read()
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != INTERVAL_COLUMNS:
        raise ValueError("not an interval CSV")
    out = []
    for rec in reader:
        if not rec:
            continue
        out.append(ForecastInterval(
            t_index=int(rec[0]), date=date.fromisoformat(rec[1]) if rec[1] else None,
            channel=rec[2], alpha=float(rec[3]), point=float(rec[4]), lower=float(rec[5]),
            upper=float(rec[6]), extrapolated=rec[7] == "1", validity_warning=rec[8]))
    return out


def _floats(a) -> list:
    return [None if not math.isfinite(v) else float(v) for v in np.asarray(a, dtype=np.float64)]


def _array(v) -> np.ndarray:
    return np.array([np.nan if x is None else x for x in v], dtype=np.float64)


def calibration_to_dict(calib: ChannelCalibration) -> dict:
    """JSON-ready form of a calibration; the boosting ensemble is stored separately."""
    return {
        "format": "heatcast.channel_calibration",
        "version": 1,
        "channel": calib.channel,
        "score_predictor": calib.score_predictor_kind,
        "score_offset": calib.score_offset,
        "scores": _floats(calib.scores),
        "score_inputs": _floats(calib.score_inputs),
        "fitted": None if calib.fitted is None else _floats(calib.fitted),
        "whiteness": calib.whiteness.to_dict(),
        "ar1": None if calib.ar1 is None else {
            "phi": calib.ar1.phi, "intercept": calib.ar1.intercept, "n_used": calib.ar1.n_used},
        "loess": None if calib.loess is None else calib.loess.to_dict(),
        "conformal": None if calib.conformal is None else calib.conformal.to_dict(),
        "notes": list(calib.notes),
        "score_model": calib.score_model.to_dict(),
    }


def calibration_from_dict(d: dict, ensemble: BoostedEnsemble) -> ChannelCalibration:
    if d.get("format") != "heatcast.channel_calibration" or d.get("version") != 1:
        raise ValueError("not a supported serialized calibration")
    scores = _array(d["scores"])
    ar1 = None
    if d["ar1"] is not None:
        a = d["ar1"]
        ar1 = Ar1Model(phi=a["phi"], intercept=a["intercept"],
                       residuals=scores - d["score_offset"], n_used=a["n_used"])
    return ChannelCalibration(
        channel=d["channel"], scores=scores, score_inputs=_array(d["score_inputs"]),
        score_model=Forest.from_dict(d["score_model"]),
        score_predictor_kind=d["score_predictor"], ensemble=ensemble,
        whiteness=WhitenessReport(**d["whiteness"]), ar1=ar1,
        score_offset=d["score_offset"],
        loess=None if d["loess"] is None else LoessModel.from_dict(d["loess"]),
        fitted=None if d["fitted"] is None else _array(d["fitted"]),
        conformal=None if d["conformal"] is None else ConformalMargin.from_dict(d["conformal"]),
        notes=list(d["notes"]),
    )
