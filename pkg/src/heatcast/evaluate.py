"""Interval summaries, coverage audits, plot-data exports and the synthetic benchmark."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .conformal import ForecastInterval
from .ingest import empirical_quantile
from .smoother import fit_loess, predict_loess
from .synth import ScenarioSpec, synth_generate

__all__ = [
    "IntervalSummary",
    "CoverageReport",
    "FitSeries",
    "BenchmarkResult",
    "TABLE1_HEADER",
    "top_decile",
    "summarize_intervals",
    "coverage_audit",
    "fit_series_export",
    "table1_summaries",
    "table1_csv",
    "coverage_benchmark",
    "synth_generate",
]

SUBSETS = ("all", "top_decile")
TABLE1_HEADER = ("Time", "Min .90", "Mean .90", "Max .90", "Min .70", "Mean .70", "Max .70")
TABLE1_ALPHAS = (0.10, 0.30)
_CHANNEL_LABEL = {"PM": "2PM", "AM": "2AM"}


@dataclass(frozen=True)
class IntervalSummary:
    """Min, mean and max interval length over a set of intervals."""

    channel: str
    alpha: float
    subset: str
    min_len: float
    mean_len: float
    max_len: float
    n: int

    def __post_init__(self):
        if self.min_len < 0:
            raise ValueError("interval lengths must be non-negative")
        # the mean of floats can drift past an extreme by an ulp when all lengths agree
        if not (self.min_len <= self.mean_len * (1 + 1e-12) + 1e-12
                and self.mean_len <= self.max_len * (1 + 1e-12) + 1e-12):
            raise ValueError("expected min_len <= mean_len <= max_len")


def top_decile(intervals: Sequence[ForecastInterval]) -> list[ForecastInterval]:
    """Intervals whose point forecast is among the highest 10% (ties at the cut kept)."""
    if not intervals:
        return []
    points = np.array([iv.point for iv in intervals])
    k = max(1, math.ceil(0.1 * points.size))
    cut = np.sort(points)[::-1][k - 1]
    return [iv for iv in intervals if iv.point >= cut]


def summarize_intervals(intervals: Sequence[ForecastInterval],
                        subset: str = "all") -> IntervalSummary:
    """Exact min/mean/max of ``upper - lower``.

    All intervals must share one channel and one alpha. ``subset="top_decile"``
    first keeps the cases with the highest 10% of point forecasts.
    """
    if subset not in SUBSETS:
        raise ValueError(f"subset must be one of {SUBSETS}")
    chosen = list(intervals) if subset == "all" else top_decile(list(intervals))
    if not chosen:
        raise ValueError("no intervals to summarize")
    channels = {iv.channel for iv in chosen}
    alphas = {iv.alpha for iv in chosen}
    if len(channels) != 1 or len(alphas) != 1:
        raise ValueError("summarize_intervals needs a single channel and alpha")
    # sort so the mean does not depend on input order
    lengths = np.sort([iv.length for iv in chosen])
    return IntervalSummary(channels.pop(), alphas.pop(), subset, float(lengths[0]),
                           float(math.fsum(lengths) / lengths.size), float(lengths[-1]),
                           int(lengths.size))


@dataclass(frozen=True)
class CoverageReport:
    coverage: float
    n: int
    n_missing: int
    by_alpha: dict = field(default_factory=dict)
    by_channel_alpha: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["by_alpha"] = {repr(k): v for k, v in self.by_alpha.items()}
        d["by_channel_alpha"] = {f"{c}@{a!r}": v for (c, a), v in self.by_channel_alpha.items()}
        return d


def coverage_audit(intervals: Sequence[ForecastInterval], truths) -> CoverageReport:
    """Fraction of truths inside their interval, bounds inclusive.

    Non-finite truths (e.g. a missing next-night reading) are skipped and
    counted in ``n_missing``. Breakdowns map to ``{"coverage", "n"}``.
    """
    truths = np.asarray(truths, dtype=np.float64).ravel()
    if len(intervals) != truths.size:
        raise ValueError(f"{len(intervals)} intervals but {truths.size} truths")
    hits: dict = {}
    total_hit = total_n = missing = 0
    for iv, y in zip(intervals, truths):
        if not math.isfinite(y):
            missing += 1
            continue
        c = iv.covers(float(y))
        total_hit += c
        total_n += 1
        for key in (("a", iv.alpha), ("ca", (iv.channel, iv.alpha))):
            h, n = hits.get(key, (0, 0))
            hits[key] = (h + c, n + 1)
    def table(kind):
        return {k: {"coverage": h / n, "n": n}
                for (tag, k), (h, n) in sorted(hits.items(), key=lambda kv: str(kv[0]))
                if tag == kind}
    cov = total_hit / total_n if total_n else math.nan
    return CoverageReport(cov, total_n, missing, table("a"), table("ca"))


@dataclass(frozen=True, eq=False)
class FitSeries:
    """Per-day table for redrawing the fitted-versus-observed figures."""

    columns = ("date", "observed", "fitted", "smoothed_observed", "smoothed_fitted",
               "q90_line")
    dates: list
    observed: np.ndarray
    fitted: np.ndarray
    smoothed_observed: np.ndarray
    smoothed_fitted: np.ndarray
    q90_line: float

    def to_csv(self, path_or_buf=None) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(self.columns)
        for i, d in enumerate(self.dates):
            w.writerow([d.isoformat()] + [_cell(a[i]) for a in (
                self.observed, self.fitted, self.smoothed_observed, self.smoothed_fitted)]
                + [_cell(self.q90_line)])
        text = out.getvalue()
        if path_or_buf is not None:
            if hasattr(path_or_buf, "write"):
                path_or_buf.write(text)
            else:
                with open(path_or_buf, "w", encoding="utf-8", newline="") as fh:
                    fh.write(text)
        return text


def _cell(v) -> str:
    return "" if not math.isfinite(v) else repr(float(v))


def _smooth_by_day(t: np.ndarray, v: np.ndarray, span: float, degree: int) -> np.ndarray:
    out = np.full(v.shape, np.nan)
    ok = np.isfinite(v)
    if ok.sum() < degree + 2:
        return out
    model = fit_loess(t[ok], v[ok], span=span, degree=degree)
    out[ok] = [predict_loess(model, x).value for x in t[ok]]
    return out


def fit_series_export(frame, fitted, channel: str = "PM", span: float = 0.75,
                      degree: int = 2, summer_only: bool = False) -> FitSeries:
    """Observed and fitted series for one channel plus their loess curves over time.

    ``fitted`` is aligned with the frame rows (NaN where no fit exists).
    ``summer_only`` keeps June through September before smoothing. The
    ``q90_line`` is the 0.9 sample quantile of the observed values shown.
    """
    if channel not in _CHANNEL_LABEL:
        raise ValueError("channel must be 'PM' or 'AM'")
    fitted = np.asarray(fitted, dtype=np.float64).ravel()
    if fitted.size != len(frame):
        raise ValueError("fitted values must be aligned with the frame rows")
    observed = frame.y_pm if channel == "PM" else frame.y_am
    dates = frame.dates
    keep = np.ones(len(frame), dtype=bool)
    if summer_only:
        keep = np.array([6 <= d.month <= 9 for d in dates])
    obs, fit = observed[keep], fitted[keep]
    t = np.array([r.t for r in frame.rows], dtype=np.float64)[keep]
    finite = obs[np.isfinite(obs)]
    q90 = empirical_quantile(finite, 0.9) if finite.size else math.nan
    return FitSeries([d for d, k in zip(dates, keep) if k], obs, fit,
                     _smooth_by_day(t, obs, span, degree),
                     _smooth_by_day(t, fit, span, degree), q90)


def table1_summaries(intervals: Sequence[ForecastInterval],
                     alphas: Sequence[float] = TABLE1_ALPHAS) -> dict:
    """Top-decile summaries keyed by ``(channel, alpha)`` for every pair present."""
    out = {}
    for ch in ("PM", "AM"):
        for a in alphas:
            sel = [iv for iv in intervals if iv.channel == ch and iv.alpha == a]
            if sel:
                out[(ch, a)] = summarize_intervals(sel, "top_decile")
    return out


def table1_csv(summaries: dict, path_or_buf=None) -> str:
    """Two-row table (2PM, 2AM) of top-decile lengths at 1 - alpha = .90 and .70."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(TABLE1_HEADER)
    for ch in ("PM", "AM"):
        row = [_CHANNEL_LABEL[ch]]
        for a in TABLE1_ALPHAS:
            s = summaries.get((ch, a))
            row += ["NA"] * 3 if s is None else [
                f"{s.min_len:.1f}", f"{s.mean_len:.1f}", f"{s.max_len:.1f}"]
        w.writerow(row)
    text = out.getvalue()
    if path_or_buf is not None:
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(text)
        else:
            with open(path_or_buf, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
    return text


@dataclass
class BenchmarkResult:
    """Pooled coverage and top-decile lengths per (mode, channel, alpha).

    ``rows`` has one entry per replication, calibration mode, score
    predictor, channel and alpha.
    """

    rows: list

    def pooled(self) -> dict:
        acc: dict = {}
        for r in self.rows:
            key = (r["calibrated"], r["score_predictor"], r["channel"], r["alpha"])
            h, n, lens = acc.get(key, (0, 0, []))
            acc[key] = (h + r["covered"], n + r["n"], lens + [r["top_decile_mean_len"]])
        return {k: {"coverage": h / n, "n": n, "top_decile_mean_len": float(np.mean(lens))}
                for k, (h, n, lens) in sorted(acc.items(), key=lambda kv: str(kv[0]))}


def _benchmark_rep(args):
    from .pipeline import HeatForecaster

    spec, data_seed, model_seed, alphas, modes, params = args
    train, test, _ = synth_generate(spec, data_seed)
    rows = []
    for calibrated, predictor in modes:
        f = HeatForecaster(calibrated=calibrated, score_predictor=predictor,
                           random_state=model_seed, **params).fit(train, test)
        intervals, truths = f.forecast_frame(test, alphas)
        for ch in ("PM", "AM"):
            for a in alphas:
                sel = [(iv, y) for iv, y in zip(intervals, truths)
                       if iv.channel == ch and iv.alpha == a]
                ivs = [iv for iv, _ in sel]
                ys = np.array([y for _, y in sel])
                ok = np.isfinite(ys)
                covered = sum(iv.covers(y) for iv, y in zip(ivs, ys) if math.isfinite(y))
                rows.append({"calibrated": calibrated, "score_predictor": predictor,
                             "channel": ch, "alpha": a, "covered": int(covered),
                             "n": int(ok.sum()),
                             "top_decile_mean_len": summarize_intervals(ivs, "top_decile").mean_len})
    return rows


BENCHMARK_PARAMS = {"shrinkage": 0.01, "max_trees": 1500}


def coverage_benchmark(spec: ScenarioSpec = ScenarioSpec(n_days=200), n_reps: int = 50,
                       alphas: Sequence[float] = TABLE1_ALPHAS,
                       modes: Sequence[tuple] = ((True, "fitted"), (True, "observed")),
                       forecaster_params: Optional[dict] = None, seed: int = 0,
                       n_jobs: int = 1) -> BenchmarkResult:
    """Monte Carlo coverage of the full pipeline on independent synthetic year pairs.

    Each replication draws a train and a test year from ``spec`` and fits one
    forecaster per ``(calibrated, score_predictor)`` mode. Replication seeds
    are spawned from ``seed``; with ``n_jobs > 1`` replications run in
    separate processes and the result does not depend on ``n_jobs``.
    """
    params = dict(BENCHMARK_PARAMS if forecaster_params is None else forecaster_params)
    children = np.random.SeedSequence(seed).spawn(n_reps)
    jobs = []
    for c in children:
        data_seed, model_seed = (int(v) for v in c.generate_state(2) & 0x7FFFFFFF)
        jobs.append((spec, data_seed, model_seed, tuple(alphas), tuple(modes), params))
    if n_jobs == 1:
        results = [_benchmark_rep(j) for j in jobs]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(_benchmark_rep, jobs))
    rows = []
    for rep, rr in enumerate(results):
        for r in rr:
            rows.append({"rep": rep, **r})
    return BenchmarkResult(rows)
