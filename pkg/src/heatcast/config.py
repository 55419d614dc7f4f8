"""Run configuration: a flat ``key = value`` text file.

Grammar
-------
One setting per line as ``key = value``. Blank lines and lines starting
with ``#`` are ignored; whitespace around keys and values is stripped.
Lists (``alphas``, ``missing_values``) are comma-separated. Booleans are
``true``/``false``. ``none`` clears an optional setting. Relative paths are
resolved against the directory of the config file. Unknown keys, repeated
keys and malformed lines are errors.

Column names for the station files use ``column.<field>`` keys, for example
``column.air_temp = TEMP``; ``column.timestamp``, ``column.date`` and
``column.time`` select the time columns and ``timestamp_format``,
``date_format``, ``time_format`` their formats.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field, fields, replace
from datetime import date
from typing import Optional

from .ingest import PREDICTOR_FIELDS, ColumnMap

logger = logging.getLogger(__name__)

__all__ = ["ConfigError", "RunConfig", "parse_config_text", "load_config"]


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


_COLUMN_KEYS = {
    "column.timestamp": "timestamp",
    "column.date": "date_column",
    "column.time": "time_column",
    "timestamp_format": "timestamp_format",
    "date_format": "date_format",
    "time_format": "time_format",
    "delimiter": "delimiter",
    **{f"column.{f}": f for f in PREDICTOR_FIELDS},
}


@dataclass(frozen=True)
class RunConfig:
    train_csv: Optional[str] = None
    test_csv: Optional[str] = None
    out_dir: Optional[str] = None
    train_start: Optional[date] = None
    train_end: Optional[date] = None
    test_start: Optional[date] = None
    test_end: Optional[date] = None
    columns: ColumnMap = ColumnMap()
    lag_days: int = 14
    tau: float = 0.90
    shrinkage: float = 1e-4
    max_depth: int = 6
    min_node: int = 5
    max_trees: int = 100_000
    bag_fraction: float = 1.0
    loess_span: float = 0.75
    loess_degree: int = 2
    qrf_n_trees: int = 500
    qrf_min_node: int = 5
    qrf_max_features: Optional[int] = None
    qrf_bootstrap: bool = True
    alphas: tuple = (0.10, 0.30)
    simultaneous: bool = False
    seed: int = 0
    score_predictor: str = "fitted"
    score_centering: str = "process_mean"
    calibrated_conformal: bool = False
    calibration_block: int = 14
    calibration_every: int = 2
    figure_summer_only: bool = True

    def validate(self) -> "RunConfig":
        """Raise :class:`ConfigError` unless every setting is in range."""
        for name in ("tau", "loess_span", "bag_fraction"):
            v = getattr(self, name)
            upper_ok = v <= 1 if name != "tau" else v < 1
            if not (0 < v and upper_ok):
                raise ConfigError(f"{name} must be in (0, 1{']' if name != 'tau' else ')'}, got {v}")
        if not 0 < self.shrinkage <= 1:
            raise ConfigError(f"shrinkage must be in (0, 1], got {self.shrinkage}")
        if not self.alphas:
            raise ConfigError("alphas must not be empty")
        for a in self.alphas:
            if not 0 < a < 1:
                raise ConfigError(f"alpha must be in (0, 1), got {a}")
        positive = ("max_depth", "min_node", "max_trees", "qrf_n_trees", "qrf_min_node",
                    "calibration_block")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.qrf_max_features is not None and self.qrf_max_features < 1:
            raise ConfigError("qrf_max_features must be >= 1")
        if self.calibration_every < 2:
            raise ConfigError("calibration_every must be >= 2")
        if self.lag_days < 1:
            raise ConfigError("lag_days must be >= 1")
        if self.loess_degree not in (1, 2):
            raise ConfigError("loess_degree must be 1 or 2")
        if self.score_predictor not in ("fitted", "observed"):
            raise ConfigError("score_predictor must be 'fitted' or 'observed'")
        if self.score_centering not in ("process_mean", "none"):
            raise ConfigError("score_centering must be 'process_mean' or 'none'")
        for a, b in (("train_start", "train_end"), ("test_start", "test_end")):
            lo, hi = getattr(self, a), getattr(self, b)
            if lo is not None and hi is not None and hi < lo:
                raise ConfigError(f"{b} precedes {a}")
        paths = [os.path.abspath(p) for p in (self.train_csv, self.test_csv, self.out_dir)
                 if p is not None]
        if len(set(paths)) != len(paths):
            raise ConfigError("train_csv, test_csv and out_dir must be distinct")
        return self

    def require_inputs(self) -> None:
        missing = [k for k in ("train_csv", "test_csv") if getattr(self, k) is None]
        if missing:
            raise ConfigError(f"missing required setting(s): {', '.join(missing)}")

    def with_alphas(self, alphas) -> "RunConfig":
        """Copy with ``alphas`` deduplicated (first occurrence kept)."""
        seen = []
        for a in alphas:
            a = float(a)
            if a in seen:
                logger.warning("alpha %r listed more than once; duplicate ignored", a)
                continue
            seen.append(a)
        return replace(self, alphas=tuple(seen))

    def to_items(self, include_out: bool = False) -> list[tuple[str, str]]:
        """Canonical (key, value) pairs; ``out_dir`` only when asked for."""
        items = []
        for f in fields(self):
            if f.name == "columns":
                for key, attr in _COLUMN_KEYS.items():
                    items.append((key, _fmt(getattr(self.columns, attr))))
                items.append(("missing_values", ",".join(self.columns.missing_values)))
                continue
            if f.name == "out_dir" and not include_out:
                continue
            items.append((f.name, _fmt(getattr(self, f.name))))
        return items

    def to_text(self, include_out: bool = False) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_items(include_out))

    def to_dict(self, include_out: bool = False) -> dict:
        return dict(self.to_items(include_out))


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, date):
        return v.isoformat()
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    return str(v)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_PATH_KEYS = ("train_csv", "test_csv", "out_dir")


def _convert(key: str, raw: str, base_dir: Optional[str]):
    kind = _FIELD_TYPES[key]
    if raw.lower() == "none" and (kind.startswith("Optional") or key in _PATH_KEYS):
        return None
    try:
        if key in _PATH_KEYS:
            return raw if base_dir is None or os.path.isabs(raw) else os.path.normpath(
                os.path.join(base_dir, raw))
        if "date" in kind:
            return date.fromisoformat(raw)
        if kind == "bool":
            if raw.lower() not in ("true", "false"):
                raise ValueError("expected true or false")
            return raw.lower() == "true"
        if "int" in kind:
            return int(raw)
        if kind == "float":
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError("must be finite")
            return v
        if kind == "tuple":
            return tuple(float(x) for x in raw.split(",") if x.strip())
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None


def parse_config_text(text: str, base_dir: Optional[str] = None) -> RunConfig:
    """Parse the flat grammar into a validated :class:`RunConfig`.

    Duplicate alpha values are dropped with a warning.
    """
    values: dict = {}
    col: dict = {}
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if "=" not in s:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (p.strip() for p in s.split("=", 1))
        if key in seen:
            raise ConfigError(f"line {lineno}: {key} set twice")
        seen.add(key)
        if key in _COLUMN_KEYS:
            col[_COLUMN_KEYS[key]] = None if raw.lower() == "none" else raw
        elif key == "missing_values":
            col["missing_values"] = tuple(x.strip() for x in raw.split(","))
        elif key in _FIELD_TYPES and key != "columns":
            values[key] = _convert(key, raw, base_dir)
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    if col.get("delimiter") == "\\t":
        col["delimiter"] = "\t"
    cfg = RunConfig(columns=ColumnMap(**col), **values)
    if "alphas" in values:
        cfg = cfg.with_alphas(values["alphas"])
    return cfg.validate()


def load_config(path: str) -> RunConfig:
    """Read a config file, or the config stored in a run manifest (``.json``)."""
    import json

    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    base = os.path.dirname(os.path.abspath(path))
    if path.endswith(".json"):
        try:
            doc = json.loads(text)
            items = doc["config"]
        except (ValueError, KeyError, TypeError):
            raise ConfigError(f"{path} is not a run manifest") from None
        text = "".join(f"{k} = {v}\n" for k, v in items.items())
    return parse_config_text(text, base)
