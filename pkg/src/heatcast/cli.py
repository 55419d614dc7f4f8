"""Command line interface: ``heatcast {run,forecast,diagnose,evaluate,synth}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 model error.
Errors are reported on stderr tagged with the stage that failed.

Seeds: the config ``seed`` is expanded with ``numpy.random.SeedSequence``;
child ``i`` seeds stage ``i`` of ("boosting", "qrf_pm", "qrf_am").
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import shutil
import sys
from dataclasses import replace
from datetime import date, timedelta
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config, parse_config_text
from .conformal import (
    calibration_from_dict,
    calibration_to_dict,
    bonferroni_adjust,
    forecast_am,
    forecast_pm,
    intervals_to_csv,
    read_intervals_csv,
)
from .boosting import BoostedEnsemble
from .evaluate import (
    coverage_audit,
    coverage_benchmark,
    fit_series_export,
    table1_csv,
    table1_summaries,
)
from .ingest import DataError, build_frame, parse_station_csv, read_frame_csv, empirical_quantile
from .pipeline import HeatForecaster
from .smoother import pair_am_channel, predict_loess
from .synth import ScenarioSpec, oracle_am, oracle_pm, synth_years, write_station_csv

logger = logging.getLogger("heatcast")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_MODEL = 0, 2, 3, 4
MANIFEST = "MANIFEST.json"
RUN_SUBDIRS = ("frames", "models", "curves", "diagnostics", "intervals", "summary", "figures")


class StageError(Exception):
    def __init__(self, stage: str, code: int, message: str):
        super().__init__(message)
        self.stage = stage
        self.code = code


def _stage(stage: str, fn, *args, **kw):
    """Run ``fn`` and convert failures to a stage-tagged error."""
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except ConfigError as exc:
        raise StageError(stage, EXIT_CONFIG, str(exc)) from exc
    except (DataError, OSError, UnicodeDecodeError) as exc:
        raise StageError(stage, EXIT_DATA, str(exc)) from exc
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        code = EXIT_DATA if stage == "ingest" else EXIT_MODEL
        raise StageError(stage, code, str(exc)) from exc


# --------------------------------------------------------------------- I/O

def _write(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"


def _json_safe(v):
    if isinstance(v, float):
        return None if not math.isfinite(v) else v
    if isinstance(v, dict):
        return {str(k): _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return _json_safe(v.item())
    return v


def _sha256(path: str) -> str:
    import hashlib

    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions() -> dict:
    import numba
    import scipy
    import sklearn

    return {"heatcast": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "scikit-learn": sklearn.__version__, "numba": numba.__version__,
            "python": ".".join(map(str, sys.version_info[:3]))}


def _alpha_tag(a: float) -> str:
    return repr(float(a))


# ------------------------------------------------------------------ run

def _default_window(records, start, end):
    if start is not None and end is not None:
        return start, end
    pm_dates = [r.date for r in records if r.hour == 14]
    if not pm_dates:
        raise DataError("no 14:00 observations to place the analysis window")
    year = max(pm_dates).year
    return (start or date(year, 4, 1)), (end or date(year, 9, 30))


def _ingest(cfg: RunConfig, which: str):
    path = getattr(cfg, f"{which}_csv")
    if not os.path.isfile(path):
        raise DataError(f"{which} file not found: {path}")
    diag: list[str] = []
    records = parse_station_csv(path, cfg.columns, diagnostics=diag)
    start, end = _default_window(records, getattr(cfg, f"{which}_start"),
                                 getattr(cfg, f"{which}_end"))
    frame = build_frame(records, cfg.lag_days, start, end)
    return frame, diag


def _forecaster(cfg: RunConfig) -> HeatForecaster:
    return HeatForecaster(
        tau=cfg.tau, shrinkage=cfg.shrinkage, max_depth=cfg.max_depth, min_node=cfg.min_node,
        max_trees=cfg.max_trees, bag_fraction=cfg.bag_fraction, loess_span=cfg.loess_span,
        loess_degree=cfg.loess_degree, qrf_n_trees=cfg.qrf_n_trees,
        qrf_min_node=cfg.qrf_min_node, qrf_max_features=cfg.qrf_max_features,
        qrf_bootstrap=cfg.qrf_bootstrap, score_predictor=cfg.score_predictor,
        score_centering=cfg.score_centering, calibrated=cfg.calibrated_conformal,
        calibration_block=cfg.calibration_block, calibration_every=cfg.calibration_every,
        random_state=cfg.seed)


def _prepare_out(out: str) -> None:
    if os.path.exists(out):
        entries = os.listdir(out)
        if entries and MANIFEST not in entries:
            raise ConfigError(f"output directory {out} is not empty and holds no {MANIFEST}")
        for name in entries:
            p = os.path.join(out, name)
            if name in RUN_SUBDIRS:
                shutil.rmtree(p)
            elif name == MANIFEST:
                os.remove(p)
    os.makedirs(out, exist_ok=True)


def _fig2_rows(x, y, smooth):
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(("fitted", "observed", "smoothed"))
    for a, b, c in zip(x, y, smooth):
        w.writerow([repr(float(a)), repr(float(b)), repr(float(c))])
    return out.getvalue()


def _curve_csv(model, lo: float, hi: float, n: int = 101) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(("x", "y"))
    for v in np.linspace(lo, hi, n):
        w.writerow([repr(float(v)), repr(predict_loess(model, float(v)).value)])
    return out.getvalue()


def _fig1_csv(train, q_pm, q_am) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(("date", "y_pm", "y_am", "q90_pm", "q90_am"))
    for r in train.rows:
        w.writerow([r.date.isoformat()] + [
            "" if not math.isfinite(v) else repr(float(v)) for v in (r.y_pm, r.y_am, q_pm, q_am)])
    return out.getvalue()


def diagnose_report(pm: dict, am: dict, extrapolated: int = 0) -> str:
    """Human-readable summary of both calibrations (as stored in the run directory)."""
    lines = []
    for cal in (pm, am):
        ch = cal["channel"]
        wt = cal["whiteness"]
        lines.append(f"[{ch}]")
        lines.append(f"  scores: n={len(cal['scores'])} min={min(cal['scores']):.4f} "
                     f"mean={float(np.mean(cal['scores'])):.4f} max={max(cal['scores']):.4f}")
        lines.append(f"  score predictor: {cal['score_predictor']}; "
                     f"score offset: {cal['score_offset']:.6g}")
        if cal["ar1"] is None:
            lines.append("  AR(1): not needed (raw residuals pass)")
        else:
            a = cal["ar1"]
            lines.append(f"  AR(1): phi={a['phi']:.6f} intercept={a['intercept']:.6f} "
                         f"n_used={a['n_used']}")
        lines.append(f"  Ljung-Box ({wt['series']}): Q={wt['ljung_box_stat']:.4f} "
                     f"lags={wt['lags_tested']} df={wt['df']} p={wt['p_value']:.6f} "
                     f"lag1 autocorr={wt['lag1_autocorr']:.4f}")
        verdict = "PASS" if wt["passed"] else f"FAIL (Ljung-Box p={wt['p_value']:.6f})"
        lines.append(f"  scores exchangeable: {verdict}")
        n_cal = 0 if cal["conformal"] is None else len(cal["conformal"]["points"])
        lines.append(f"  conformal calibration points: {n_cal}")
        for note in cal["notes"]:
            lines.append(f"  note: {note}")
    lines.append(f"extrapolated 02:00 forecasts: {extrapolated}")
    warnings_ = [f"{c['channel']}: scores fail the whiteness test" for c in (pm, am)
                 if not c["whiteness"]["passed"]]
    lines.append("validity warnings: " + ("none" if not warnings_ else "; ".join(warnings_)))
    return "\n".join(lines) + "\n"


def run_pipeline(cfg: RunConfig, out: str) -> dict:
    """Execute every stage, writing artifacts under ``out``; returns the manifest."""
    manifest = {
        "status": "incomplete",
        "stages_completed": [],
        "config": cfg.to_dict(),
        "versions": _versions(),
    }

    def done(stage):
        manifest["stages_completed"].append(stage)

    def save_manifest():
        _write(os.path.join(out, MANIFEST), _dump(_json_safe(manifest)))

    try:
        # ingest both files before anything is written
        train, diag_train = _stage("ingest", _ingest, cfg, "train")
        test, diag_test = _stage("ingest", _ingest, cfg, "test")
        _stage("output", _prepare_out, out)
        manifest["inputs"] = {
            "train_csv": {"sha256": _sha256(cfg.train_csv), "rows": len(train),
                          "window": [train.start_date.isoformat(), train.end_date.isoformat()],
                          "diagnostics": diag_train},
            "test_csv": {"sha256": _sha256(cfg.test_csv), "rows": len(test),
                         "window": [test.start_date.isoformat(), test.end_date.isoformat()],
                         "diagnostics": diag_test},
        }
        _write(os.path.join(out, "frames", "train_frame.csv"), train.to_csv())
        _write(os.path.join(out, "frames", "test_frame.csv"), test.to_csv())
        done("ingest")

        model = _forecaster(cfg)
        _stage("train", model.fit, train, test)
        ens = model.ensemble_
        manifest["seeds"] = {"config_seed": cfg.seed, **model.seeds_}
        manifest["boosting"] = {"best_iter": ens.best_iter, "n_trees_trained": len(ens.trees),
                                "init": ens.init_value}
        _write(os.path.join(out, "models", "boosting.json"),
               json.dumps(ens.to_dict(max_trees=ens.best_iter), separators=(",", ":")) + "\n")
        _write(os.path.join(out, "curves", "loss_train.csv"), ens.loss_curve_csv("train"))
        if ens.test_loss_curve is not None:
            _write(os.path.join(out, "curves", "loss_test.csv"), ens.loss_curve_csv("test"))
        done("train")

        pm, am = model.pm_calibration_, model.am_calibration_
        for cal in (pm, am):
            tag = cal.channel.lower()
            _write(os.path.join(out, "models", f"calibration_{tag}.json"),
                   json.dumps(_json_safe(calibration_to_dict(cal)), separators=(",", ":"))
                   + "\n")
            _write(os.path.join(out, "diagnostics", f"whiteness_{tag}.json"),
                   _dump(_json_safe(cal.whiteness.to_dict())))
        manifest["calibration"] = {c.channel: _json_safe(c.summary()) for c in (pm, am)}
        manifest["validity_warnings"] = [c.validity_warning for c in (pm, am)
                                         if c.validity_warning]
        done("calibrate")

        intervals, truths = _stage("forecast", model.forecast_frame, test, cfg.alphas,
                                   cfg.simultaneous)
        levels = bonferroni_adjust(cfg.alphas) if cfg.simultaneous else list(cfg.alphas)
        manifest["alpha_levels"] = [{"requested": a, "per_query": lv}
                                    for a, lv in zip(cfg.alphas, levels)]
        for ch in ("PM", "AM"):
            for a, lv in zip(cfg.alphas, levels):
                sel = [iv for iv in intervals if iv.channel == ch and iv.alpha == lv]
                _write(os.path.join(out, "intervals", f"test_{ch}_alpha{_alpha_tag(a)}.csv"),
                       intervals_to_csv(sel))
        n_extrap = sum(iv.extrapolated for iv in intervals if iv.channel == "AM")
        _write(os.path.join(out, "diagnostics", "report.txt"),
               diagnose_report(calibration_to_dict(pm), calibration_to_dict(am), n_extrap))
        done("forecast")

        audit = coverage_audit(intervals, truths)
        _write(os.path.join(out, "summary", "coverage.json"), _dump(_json_safe(audit.to_dict())))
        summaries = _stage("evaluate", table1_summaries, intervals, levels)
        # Table 1 is keyed by the requested levels
        by_req = {(ch, a): summaries[(ch, lv)] for ch in ("PM", "AM")
                  for a, lv in zip(cfg.alphas, levels) if (ch, lv) in summaries}
        _write(os.path.join(out, "summary", "table1.csv"), table1_csv(by_req))
        manifest["coverage"] = _json_safe(audit.to_dict())
        done("evaluate")

        _stage("figures", _write_figures, cfg, out, train, pm, am)
        done("figures")
    except StageError as exc:
        manifest["failed_stage"] = exc.stage
        manifest["error"] = str(exc)
        if os.path.isdir(out):
            save_manifest()
        raise
    manifest["status"] = "complete"
    save_manifest()
    return manifest


def _write_figures(cfg, out, train, pm, am):
    fig = os.path.join(out, "figures")
    q_pm = empirical_quantile(train.y_pm[np.isfinite(train.y_pm)], 0.9)
    am_obs = train.y_am[np.isfinite(train.y_am)]
    q_am = empirical_quantile(am_obs, 0.9) if am_obs.size else math.nan
    _write(os.path.join(fig, "fig1_temperatures.csv"), _fig1_csv(train, q_pm, q_am))
    pm_fit = pm.fitted
    ok = np.isfinite(pm_fit) & np.isfinite(train.y_pm)
    if ok.sum() >= cfg.loess_degree + 2 and np.unique(pm_fit[ok]).size >= cfg.loess_degree + 2:
        from .smoother import fit_loess

        sm = fit_loess(pm_fit[ok], train.y_pm[ok], cfg.loess_span, cfg.loess_degree)
        smooth = [predict_loess(sm, v).value for v in pm_fit[ok]]
        _write(os.path.join(fig, "fig2_pm.csv"), _fig2_rows(pm_fit[ok], train.y_pm[ok], smooth))
    from .conformal import pm_fitted_for_frame

    x_am, y_am, idx = pair_am_channel(train, pm_fitted_for_frame(train, pm.ensemble),
                                      min_pairs=0, return_index=True)
    smooth_am = [predict_loess(am.loess, v).value for v in x_am]
    _write(os.path.join(fig, "fig2_am.csv"), _fig2_rows(x_am, y_am, smooth_am))
    _write(os.path.join(fig, "am_loess_curve.csv"),
           _curve_csv(am.loess, float(am.loess.x_train[0]), float(am.loess.x_train[-1])))
    am_fit = np.full(len(train), np.nan)
    am_fit[idx] = smooth_am
    for ch, fitted in (("pm", pm_fit), ("am", am_fit)):
        series = fit_series_export(train, fitted, ch.upper(), cfg.loess_span, cfg.loess_degree,
                                   summer_only=cfg.figure_summer_only)
        _write(os.path.join(fig, f"fig3_{ch}.csv"), series.to_csv())


# -------------------------------------------------------------- loading

def load_run(model_dir: str):
    """(ensemble, pm calibration, am calibration) stored by ``run``."""
    man = os.path.join(model_dir, MANIFEST)
    if not os.path.isfile(man):
        raise DataError(f"{model_dir} has no {MANIFEST}")
    with open(man, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("status") != "complete":
        raise DataError(f"run in {model_dir} is incomplete "
                        f"(failed stage: {doc.get('failed_stage', 'unknown')})")
    with open(os.path.join(model_dir, "models", "boosting.json"), encoding="utf-8") as fh:
        ens = BoostedEnsemble.from_dict(json.load(fh))
    cals = []
    for tag in ("pm", "am"):
        with open(os.path.join(model_dir, "models", f"calibration_{tag}.json"),
                  encoding="utf-8") as fh:
            cals.append(calibration_from_dict(json.load(fh), ens))
    return ens, cals[0], cals[1], doc


def _read_predictors(path: str):
    """Rows of x1..x8 (plus optional identifiers) from a CSV file."""
    allowed_extra = {"t", "t_index", "date", "day_counter", "y_pm", "y_am"}
    with open(path, encoding="utf-8-sig", newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        need = [f"x{i}" for i in range(1, 9)]
        missing = [c for c in need if c not in header]
        if missing:
            raise DataError(f"predictor file lacks column {missing[0]} "
                            f"(expected x1..x8, found {len(header)} columns)")
        extra = [c for c in header if c not in need and c not in allowed_extra]
        if extra:
            raise DataError(f"predictor file has unexpected column {extra[0]!r}")
        pos = [header.index(c) for c in need]
        X, tids, dates = [], [], []
        for lineno, rec in enumerate(reader, 2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise DataError(f"line {lineno}: {len(rec)} fields, header has {len(header)}")
            try:
                row = [float(rec[p]) if rec[p].strip() else math.nan for p in pos]
            except ValueError:
                bad = next(need[j] for j, p in enumerate(pos)
                           if not _is_float(rec[p]))
                raise DataError(f"line {lineno}: column {bad} is not numeric") from None
            if not all(math.isfinite(v) for v in row):
                logger.warning("line %d: incomplete predictors, row skipped", lineno)
                continue
            X.append(row)
            if "t_index" in header:
                tids.append(int(rec[header.index("t_index")]))
            elif "t" in header:
                tids.append(int(rec[header.index("t")]))
            else:
                tids.append(len(X))
            dates.append(date.fromisoformat(rec[header.index("date")])
                         if "date" in header and rec[header.index("date")] else None)
    if not X:
        raise DataError("predictor file has no complete rows")
    return np.array(X), tids, dates


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return not s.strip()


# ------------------------------------------------------------- commands

def cmd_run(args) -> int:
    cfg = _stage("config", _config_from_args, args)
    out = args.out or cfg.out_dir
    if out is None:
        raise StageError("config", EXIT_CONFIG, "no output directory (use --out or out_dir)")
    cfg = _stage("config", lambda: replace(cfg, out_dir=out).validate())
    manifest = run_pipeline(cfg, out)
    cov = manifest["coverage"]
    print(f"run complete: {out}")
    print(f"best_iter={manifest['boosting']['best_iter']} "
          f"coverage={cov['coverage']:.4f} (n={cov['n']})")
    for w in manifest["validity_warnings"]:
        print(f"warning: {w}")
    return EXIT_OK


def _config_from_args(args) -> RunConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = parse_config_text("")
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.alpha:
        cfg = cfg.with_alphas(args.alpha)
    if args.simultaneous:
        cfg = replace(cfg, simultaneous=True)
    if args.score_predictor:
        cfg = replace(cfg, score_predictor=args.score_predictor)
    if args.calibrated_conformal:
        cfg = replace(cfg, calibrated_conformal=True)
    cfg.require_inputs()
    return cfg.validate()


def cmd_forecast(args) -> int:
    ens, pm, am, doc = _stage("load", load_run, args.model_dir)
    alphas = args.alpha or [float(x) for x in doc["config"]["alphas"].split(",")]
    alphas = _stage("config", lambda: RunConfig().with_alphas(alphas).validate().alphas)
    X, tids, dates = _stage("ingest", _read_predictors, args.predictors)
    levels = bonferroni_adjust(alphas) if args.simultaneous else list(alphas)
    has_dates = all(d is not None for d in dates)
    rows = []
    for a, lv in zip(alphas, levels):
        fam = a if args.simultaneous else None
        p = _stage("forecast", forecast_pm, pm, X, lv, t_index=tids,
                   dates=dates if has_dates else None, family_alpha=fam)
        m = _stage("forecast", forecast_am, pm, am, X, lv, t_index=[t + 1 for t in tids],
                   dates=[d + timedelta(days=1) for d in dates] if has_dates else None,
                   family_alpha=fam)
        rows += p + m
    text = intervals_to_csv(rows)
    meta = {"model_dir_manifest_seed": doc["config"]["seed"], "simultaneous": args.simultaneous,
            "alpha_levels": [{"requested": a, "per_query": lv} for a, lv in zip(alphas, levels)],
            "validity_warnings": [c.validity_warning for c in (pm, am) if c.validity_warning],
            "exceedance_boundary": "threshold equal to a bound takes the inclusive probability"}
    if args.out:
        _write(os.path.abspath(args.out), text)
        _write(os.path.abspath(args.out) + ".meta.json", _dump(meta))
    else:
        sys.stdout.write(text)
    for lv_info in meta["alpha_levels"]:
        if args.simultaneous:
            print(f"alpha {lv_info['requested']!r} -> per-query level {lv_info['per_query']!r}",
                  file=sys.stderr)
    return EXIT_OK


def cmd_diagnose(args) -> int:
    def load():
        out = []
        for tag in ("pm", "am"):
            with open(os.path.join(args.model_dir, "models", f"calibration_{tag}.json"),
                      encoding="utf-8") as fh:
                out.append(json.load(fh))
        return out
    pm, am = _stage("load", load)
    n_extrap = 0
    idir = os.path.join(args.model_dir, "intervals")
    if os.path.isdir(idir):
        for name in sorted(os.listdir(idir)):
            if name.startswith("test_AM_"):
                n_extrap += sum(iv.extrapolated for iv in read_intervals_csv(os.path.join(idir, name)))
    sys.stdout.write(diagnose_report(pm, am, n_extrap))
    return EXIT_OK


def _truths_for(intervals, frame):
    by_date = {r.date: r for r in frame.rows}
    out = []
    for iv in intervals:
        r = by_date.get(iv.date)
        if r is None:
            out.append(math.nan)
        else:
            out.append(r.y_pm if iv.channel == "PM" else r.y_am)
    return np.array(out)


def cmd_evaluate(args) -> int:
    if args.benchmark:
        return _benchmark(args)
    if not args.model_dir:
        raise StageError("config", EXIT_CONFIG, "evaluate needs a run directory or --benchmark")

    def load():
        frame = read_frame_csv(os.path.join(args.model_dir, "frames", "test_frame.csv"))
        with open(os.path.join(args.model_dir, MANIFEST), encoding="utf-8") as fh:
            doc = json.load(fh)
        idir = os.path.join(args.model_dir, "intervals")
        ivs = []
        for name in sorted(os.listdir(idir)):
            ivs += read_intervals_csv(os.path.join(idir, name))
        return frame, ivs, doc
    frame, intervals, doc = _stage("load", load)
    truths = _truths_for(intervals, frame)
    audit = coverage_audit(intervals, truths)
    print(f"coverage {audit.coverage:.4f} over {audit.n} cases ({audit.n_missing} without truth)")
    for key, v in audit.by_channel_alpha.items():
        print(f"  {key[0]} alpha={key[1]!r}: coverage {v['coverage']:.4f} (n={v['n']})")
    requested = {d["per_query"]: d["requested"] for d in doc.get("alpha_levels", [])}
    summaries = table1_summaries(intervals, sorted(requested))
    sys.stdout.write(table1_csv({(ch, requested[lv]): s for (ch, lv), s in summaries.items()}))
    return EXIT_OK


def _benchmark(args) -> int:
    modes = [(True, "fitted"), (True, "observed"), (False, "fitted"), (False, "observed")]
    alphas = args.alpha or [0.10, 0.30]
    res = _stage("evaluate", coverage_benchmark, n_reps=args.benchmark, alphas=alphas,
                 modes=modes, seed=args.seed or 0)
    lines = ["calibrated,score_predictor,channel,alpha,coverage,n,top_decile_mean_len"]
    for (cal, sp, ch, a), v in res.pooled().items():
        lines.append(f"{str(cal).lower()},{sp},{ch},{a!r},{v['coverage']!r},{v['n']},"
                     f"{v['top_decile_mean_len']!r}")
    text = "\n".join(lines) + "\n"
    if args.out:
        _write(os.path.abspath(args.out), text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_synth(args) -> int:
    def spec_from():
        if not args.config:
            return ScenarioSpec()
        values = {}
        with open(args.config, encoding="utf-8") as fh:
            for line in fh:
                s = line.strip()
                if s and not s.startswith("#"):
                    if "=" not in s:
                        raise ConfigError(f"bad scenario line: {s!r}")
                    k, v = (p.strip() for p in s.split("=", 1))
                    values[k] = v
        try:
            return ScenarioSpec.from_mapping(values)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    spec = _stage("config", spec_from)
    if not args.out:
        raise StageError("config", EXIT_CONFIG, "synth needs --out")
    seed = args.seed or 0
    train, test = _stage("synth", synth_years, spec, seed)
    out = args.out
    _write(os.path.join(out, "train_station.csv"), write_station_csv(train.records))
    _write(os.path.join(out, "test_station.csv"), write_station_csv(test.records))
    rows = ["date,t,oracle_pm_q,oracle_am_q_next"]
    X = test.frame.X
    for i, r in enumerate(test.frame.rows):
        if np.all(np.isfinite(X[i])):
            rows.append(f"{r.date.isoformat()},{r.t},{oracle_pm(spec, X[i])[0]!r},"
                        f"{oracle_am(spec, X[i])[0]!r}")
    _write(os.path.join(out, "oracle_test.csv"), "\n".join(rows) + "\n")
    cfg = RunConfig(train_csv="train_station.csv", test_csv="test_station.csv",
                    train_start=spec.train_start,
                    train_end=spec.train_start + timedelta(days=spec.n_days - 1),
                    test_start=spec.test_start,
                    test_end=spec.test_start + timedelta(days=spec.n_days - 1),
                    lag_days=spec.lag_days, tau=spec.tau, seed=seed)
    _write(os.path.join(out, "run.cfg"),
           "# synthetic scenario written by heatcast synth\n" + cfg.to_text())
    print(f"wrote synthetic station files and run.cfg to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="heatcast", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"heatcast {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, alpha=True):
        sp.add_argument("--config", help="flat key=value config file (or a run manifest)")
        sp.add_argument("--out", help="output directory or file")
        sp.add_argument("--seed", type=int, help="override the config seed")
        if alpha:
            sp.add_argument("--alpha", type=float, action="append",
                            help="miscoverage level; repeat for several")
            sp.add_argument("--simultaneous", action="store_true",
                            help="Bonferroni-adjust across the requested alphas")

    r = sub.add_parser("run", help="ingest, train, calibrate, forecast and evaluate")
    common(r)
    r.add_argument("--score-predictor", choices=("observed", "fitted"))
    r.add_argument("--calibrated-conformal", action="store_true",
                   help="hold out blocks of training days to conformalize the intervals")
    r.set_defaults(func=cmd_run)

    f = sub.add_parser("forecast", help="intervals for new predictor rows")
    f.add_argument("model_dir")
    f.add_argument("predictors", help="CSV with columns x1..x8")
    common(f)
    f.set_defaults(func=cmd_forecast)

    d = sub.add_parser("diagnose", help="print whiteness and calibration diagnostics")
    d.add_argument("model_dir")
    d.set_defaults(func=cmd_diagnose)

    e = sub.add_parser("evaluate", help="coverage and Table 1 summary of a run, or the "
                                        "synthetic Monte Carlo benchmark")
    e.add_argument("model_dir", nargs="?")
    common(e)
    e.add_argument("--benchmark", type=int, metavar="N", help="run N synthetic replications")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("synth", help="write a synthetic train/test station pair and run.cfg")
    common(s, alpha=False)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        print(f"heatcast: error [stage={exc.stage}]: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
