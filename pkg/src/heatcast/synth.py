"""Synthetic station years with a known conditional 14:00 and 02:00 quantile.

Weather predictors follow independent stationary AR(1) processes. The 14:00
temperature of day t depends on the day counter and on pressure and humidity
observed 14 days earlier, with noise whose scale grows over the season::

    mean(t)  = base + seasonal_amp * s(t) + pressure_effect * tanh((P - 1015) / 6)
               - humidity_effect * (RH - 65) / 12
    sd(t)    = noise_sd * (1 + hetero * s(t))
    y_pm(t)  = mean(t) + sd(t) * u_t        (u: unit-variance AR(1) with noise_phi)
    y_am(t)  = am_intercept + am_slope * mean(t - 1) + am_noise_sd * v_t

where s(t) = sin(pi * (t - 1) / (n_days - 1)). The true conditional
tau-quantile given the lagged predictor vector is ``mean + z_tau * sd``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, fields, replace
from datetime import date, timedelta
from typing import Callable, Optional

import numpy as np
from scipy.stats import norm

from .ingest import PREDICTOR_FIELDS, SupervisedFrame, WeatherRecord, build_frame

__all__ = ["ScenarioSpec", "SyntheticYear", "synth_generate", "generate_year",
           "synth_years", "oracle_pm", "oracle_am", "write_station_csv"]


@dataclass(frozen=True)
class ScenarioSpec:
    n_days: int = 183
    lag_days: int = 14
    train_start: date = date(2020, 4, 1)
    test_start: date = date(2021, 4, 1)
    base: float = 17.0
    seasonal_amp: float = 9.0
    pressure_effect: float = 2.0
    humidity_effect: float = 2.0
    noise_sd: float = 1.5
    hetero: float = 0.6
    noise_phi: float = 0.0
    am_intercept: float = 3.0
    am_slope: float = 0.55
    am_noise_sd: float = 1.0
    tau: float = 0.9

    def validate(self) -> None:
        if self.n_days < 2:
            raise ValueError("n_days must be >= 2")
        if self.lag_days < 1:
            raise ValueError("lag_days must be >= 1")
        if not -1.0 < self.noise_phi < 1.0:
            raise ValueError("noise_phi must lie in (-1, 1)")
        if min(self.noise_sd, self.am_noise_sd) < 0 or self.hetero < 0:
            raise ValueError("noise scales must be non-negative")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must be in (0, 1)")

    @classmethod
    def from_mapping(cls, values: dict) -> "ScenarioSpec":
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for key, raw in values.items():
            if key not in known:
                raise ValueError(f"unknown scenario key {key!r}")
            ftype = known[key].type
            if ftype in ("date", date):
                kw[key] = raw if isinstance(raw, date) else date.fromisoformat(str(raw))
            elif ftype in ("int", int):
                kw[key] = int(raw)
            else:
                kw[key] = float(raw)
        spec = cls(**kw)
        spec.validate()
        return spec


def _season(t, n_days: int):
    return np.sin(np.pi * (np.asarray(t, dtype=np.float64) - 1.0) / (n_days - 1))


def _pm_mean(spec: ScenarioSpec, t, pressure, humidity):
    s = np.clip(_season(t, spec.n_days), 0.0, None)
    return (spec.base + spec.seasonal_amp * s
            + spec.pressure_effect * np.tanh((np.asarray(pressure) - 1015.0) / 6.0)
            - spec.humidity_effect * (np.asarray(humidity) - 65.0) / 12.0)


def _pm_sd(spec: ScenarioSpec, t):
    s = np.clip(_season(t, spec.n_days), 0.0, None)
    return spec.noise_sd * (1.0 + spec.hetero * s)


def oracle_pm(spec: ScenarioSpec, X, q: Optional[float] = None) -> np.ndarray:
    """True conditional q-quantile of y_pm given lagged predictor rows ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    q = spec.tau if q is None else q
    t = X[:, 7]
    return _pm_mean(spec, t, X[:, 3], X[:, 6]) + norm.ppf(q) * _pm_sd(spec, t)


def oracle_am(spec: ScenarioSpec, X_prev, q: Optional[float] = None) -> np.ndarray:
    """True conditional q-quantile of y_am(t) given the predictor rows of day t-1."""
    X_prev = np.atleast_2d(np.asarray(X_prev, dtype=np.float64))
    q = spec.tau if q is None else q
    mean_prev = _pm_mean(spec, X_prev[:, 7], X_prev[:, 3], X_prev[:, 6])
    return spec.am_intercept + spec.am_slope * mean_prev + norm.ppf(q) * spec.am_noise_sd


def _ar1_path(rng: np.random.Generator, n: int, phi: float) -> np.ndarray:
    z = rng.standard_normal(n)
    out = np.empty(n)
    out[0] = z[0]
    c = math.sqrt(1.0 - phi * phi)
    for i in range(1, n):
        out[i] = phi * out[i - 1] + c * z[i]
    return out


@dataclass(frozen=True, eq=False)
class SyntheticYear:
    records: list[WeatherRecord]
    frame: SupervisedFrame


def generate_year(spec: ScenarioSpec, start: date, rng: np.random.Generator) -> SyntheticYear:
    """Records from ``start - lag_days`` through the window end, plus the frame."""
    lag = spec.lag_days
    n = spec.n_days
    total = n + 2 * lag  # weather needs one extra lag so lead-in temperatures exist
    t = np.arange(1 - 2 * lag, n + 1, dtype=np.float64)  # day counter per generated day

    wind_dir = np.mod(200.0 + 70.0 * _ar1_path(rng, total, 0.5), 360.0)
    wind_speed = np.abs(3.5 + 1.5 * _ar1_path(rng, total, 0.5))
    pressure = 1015.0 + 6.0 * _ar1_path(rng, total, 0.7)
    visibility = np.clip(22000.0 + 7000.0 * _ar1_path(rng, total, 0.4), 500.0, None)
    humidity = np.clip(65.0 + 12.0 * _ar1_path(rng, total, 0.6), 5.0, 100.0)
    wind_dir = np.round(wind_dir, 1) % 360.0
    wind_speed = np.round(wind_speed, 1)
    pressure = np.round(pressure, 1)
    visibility = np.round(visibility, 0)
    humidity = np.round(humidity, 1)

    u = _ar1_path(rng, total, spec.noise_phi)
    v = rng.standard_normal(total)
    y_pm = np.full(total, np.nan)
    mean = np.full(total, np.nan)
    tc = np.maximum(t, 1.0)
    for i in range(lag, total):
        mean[i] = _pm_mean(spec, tc[i], pressure[i - lag], humidity[i - lag])
        y_pm[i] = mean[i] + _pm_sd(spec, tc[i]) * u[i]
    y_am = np.full(total, np.nan)
    for i in range(lag + 1, total):
        y_am[i] = spec.am_intercept + spec.am_slope * mean[i - 1] + spec.am_noise_sd * v[i]
    dew = np.round(y_pm - (100.0 - humidity) / 5.0, 2)

    first_day = start - timedelta(days=2 * lag)
    records = []
    for i in range(lag, total):
        day = first_day + timedelta(days=i)
        records.append(WeatherRecord(
            date=day, hour=14, wind_dir=float(wind_dir[i]), wind_speed=float(wind_speed[i]),
            air_temp=float(y_pm[i]), pressure=float(pressure[i]),
            visibility=float(visibility[i]), dew_point=float(dew[i]),
            rel_humidity=float(humidity[i]),
        ))
        if np.isfinite(y_am[i]):
            records.append(WeatherRecord(
                date=day, hour=2, wind_dir=float(wind_dir[i]),
                wind_speed=float(wind_speed[i]), air_temp=float(y_am[i]),
                pressure=float(pressure[i]), visibility=float(visibility[i]),
                dew_point=float(min(y_am[i], dew[i])), rel_humidity=float(humidity[i]),
            ))
    records.sort(key=lambda r: (r.date, r.hour))
    frame = build_frame(records, lag, start, start + timedelta(days=n - 1))
    return SyntheticYear(records, frame)


def synth_generate(spec: ScenarioSpec = ScenarioSpec(), seed: int = 0
                   ) -> tuple[SupervisedFrame, SupervisedFrame, Callable]:
    """Two independent years from one law and the oracle ``q -> Q_q(y_pm | X)``.

    The returned oracle takes ``(X, q=None)`` and defaults to ``spec.tau``.
    """
    train, test = synth_years(spec, seed)

    def oracle(X, q=None):
        return oracle_pm(spec, X, q)

    return train.frame, test.frame, oracle


def synth_years(spec: ScenarioSpec = ScenarioSpec(), seed: int = 0
                ) -> tuple[SyntheticYear, SyntheticYear]:
    """Same draws as :func:`synth_generate`, keeping the raw records."""
    spec.validate()
    train_rng, test_rng = (np.random.default_rng(s)
                           for s in np.random.SeedSequence(seed).spawn(2))
    return (generate_year(spec, spec.train_start, train_rng),
            generate_year(spec, spec.test_start, test_rng))


def write_station_csv(records, path_or_buf=None) -> str:
    """Station file in the default column layout (ISO timestamp, '.' decimals)."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(("timestamp",) + PREDICTOR_FIELDS)
    for r in records:
        w.writerow([f"{r.date.isoformat()}T{r.hour:02d}:00"]
                   + ["" if math.isnan(v) else repr(float(v)) for v in r.predictors()])
    text = out.getvalue()
    if path_or_buf is not None:
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(text)
        else:
            with open(path_or_buf, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
    return text
