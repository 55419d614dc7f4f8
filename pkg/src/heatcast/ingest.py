"""Station observation parsing and construction of the lagged supervised frame."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from datetime import date, datetime, timedelta
from typing import IO, Iterable, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "PREDICTOR_FIELDS",
    "FRAME_COLUMNS",
    "ColumnMap",
    "WeatherRecord",
    "SupervisedRow",
    "SupervisedFrame",
    "SchemaError",
    "DataError",
    "parse_station_csv",
    "build_frame",
    "empirical_quantile",
    "read_frame_csv",
]

PM_HOUR = 14
AM_HOUR = 2

# order of the seven weather predictors inside x_lagged; the day counter is x8
PREDICTOR_FIELDS = (
    "wind_dir",
    "wind_speed",
    "air_temp",
    "pressure",
    "visibility",
    "dew_point",
    "rel_humidity",
)
FRAME_COLUMNS = ("t", "date", "day_counter",
                 *(f"x{i}" for i in range(1, 9)), "y_pm", "y_am")


class DataError(ValueError):
    """Input data cannot support the requested operation."""


class SchemaError(DataError):
    """Header or column map does not match the input file."""


@dataclass(frozen=True)
class ColumnMap:
    """Names of the CSV columns holding each observation field.

    ``timestamp`` names a single column parsed with ``timestamp_format``.
    Alternatively set ``date_column``/``time_column`` (with ``date_format``
    and ``time_format``) for files that split the two.
    """

    timestamp: Optional[str] = "timestamp"
    timestamp_format: str = "%Y-%m-%dT%H:%M"
    date_column: Optional[str] = None
    date_format: str = "%Y-%m-%d"
    time_column: Optional[str] = None
    time_format: str = "%H:%M"
    wind_dir: str = "wind_dir"
    wind_speed: str = "wind_speed"
    air_temp: str = "air_temp"
    pressure: str = "pressure"
    visibility: str = "visibility"
    dew_point: str = "dew_point"
    rel_humidity: str = "rel_humidity"
    delimiter: str = ","
    missing_values: tuple[str, ...] = ("", "NA", "NaN", "9999", "99999", "999999", "-9999")

    def field_columns(self) -> dict[str, str]:
        return {f: getattr(self, f) for f in PREDICTOR_FIELDS}

    def required_columns(self) -> list[str]:
        cols = list(self.field_columns().values())
        if self.date_column:
            cols.append(self.date_column)
            if self.time_column:
                cols.append(self.time_column)
        elif self.timestamp:
            cols.append(self.timestamp)
        else:
            raise SchemaError("column map names neither a timestamp nor a date column")
        return cols


@dataclass(frozen=True)
class WeatherRecord:
    """One solar-time observation; missing numeric fields are NaN."""

    date: date
    hour: int
    wind_dir: float = math.nan
    wind_speed: float = math.nan
    air_temp: float = math.nan
    pressure: float = math.nan
    visibility: float = math.nan
    dew_point: float = math.nan
    rel_humidity: float = math.nan

    def predictors(self) -> tuple[float, ...]:
        return tuple(getattr(self, f) for f in PREDICTOR_FIELDS)

    def violations(self) -> list[str]:
        out = []
        if self.hour not in (AM_HOUR, PM_HOUR):
            out.append(f"hour={self.hour} not in {{2, 14}}")
        checks = (
            ("wind_dir", lambda v: 0.0 <= v < 360.0, "[0, 360)"),
            ("wind_speed", lambda v: v >= 0.0, ">= 0"),
            ("pressure", lambda v: v > 0.0, "> 0"),
            ("visibility", lambda v: v >= 0.0, ">= 0"),
            ("rel_humidity", lambda v: 0.0 <= v <= 100.0, "[0, 100]"),
        )
        for name, ok, desc in checks:
            v = getattr(self, name)
            if not math.isnan(v) and not ok(v):
                out.append(f"{name}={v:g} outside {desc}")
        for name in ("air_temp", "dew_point"):
            v = getattr(self, name)
            if math.isinf(v):
                out.append(f"{name} is infinite")
        return out


def _open_text(source) -> tuple[IO[str], bool]:
    """Text handle for bytes, a path, or a binary/text stream; flag = we own it."""
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(bytes(source).decode("utf-8-sig")), False
    if hasattr(source, "read"):
        if isinstance(source.read(0), bytes):
            return io.StringIO(source.read().decode("utf-8-sig")), False
        return source, False
    return open(source, "r", encoding="utf-8-sig", newline=""), True


def parse_station_csv(source, schema: ColumnMap = ColumnMap(),
                      diagnostics: Optional[list[str]] = None,
                      max_error_fraction: float = 0.10) -> list[WeatherRecord]:
    """Parse a delimited station file into 02:00 and 14:00 records.

    Rows at other hours are skipped. Rows that violate a field range are
    rejected and reported; rows whose timestamp or numbers cannot be parsed
    are reported and become fatal once they exceed ``max_error_fraction`` of
    the data rows. Messages go to ``diagnostics`` (when given) and the log.
    """
    if diagnostics is None:
        diagnostics = []

    def report(msg: str) -> None:
        diagnostics.append(msg)
        logger.warning(msg)

    fh, owned = _open_text(source)
    try:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("input has no header row") from None
        header = [h.strip() for h in header]
        missing = [c for c in schema.required_columns() if c not in header]
        if missing:
            raise SchemaError(f"header lacks column(s): {', '.join(missing)}")
        if len(set(header)) != len(header):
            raise SchemaError("header has duplicate column names")
        pos = {name: i for i, name in enumerate(header)}
        sentinels = set(schema.missing_values)

        by_key: dict[tuple[date, int], WeatherRecord] = {}
        n_rows = 0
        n_parse_errors = 0
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            n_rows += 1
            try:
                stamp = _parse_stamp(row, pos, schema)
            except (ValueError, IndexError) as exc:
                n_parse_errors += 1
                report(f"row {lineno}: bad timestamp ({exc})")
                continue
            if stamp.minute != 0 or stamp.hour not in (AM_HOUR, PM_HOUR):
                continue
            values = {}
            try:
                for name, col in schema.field_columns().items():
                    raw = row[pos[col]].strip()
                    values[name] = math.nan if raw in sentinels else float(raw)
            except (ValueError, IndexError) as exc:
                n_parse_errors += 1
                report(f"row {lineno}: unparseable value ({exc})")
                continue
            rec = WeatherRecord(date=stamp.date(), hour=stamp.hour, **values)
            bad = rec.violations()
            if bad:
                report(f"row {lineno}: rejected, {'; '.join(bad)}")
                continue
            key = (rec.date, rec.hour)
            if key in by_key:
                report(f"row {lineno}: duplicate observation for {key[0]} {key[1]:02d}:00 ignored")
                continue
            by_key[key] = rec
        if n_rows and n_parse_errors / n_rows > max_error_fraction:
            raise DataError(
                f"{n_parse_errors} of {n_rows} rows could not be parsed "
                f"(limit {max_error_fraction:.0%})"
            )
    finally:
        if owned:
            fh.close()
    return [by_key[k] for k in sorted(by_key)]


def _parse_stamp(row: Sequence[str], pos: dict[str, int], schema: ColumnMap) -> datetime:
    if schema.date_column:
        d = datetime.strptime(row[pos[schema.date_column]].strip(), schema.date_format)
        if schema.time_column:
            t = datetime.strptime(row[pos[schema.time_column]].strip(), schema.time_format)
            return d.replace(hour=t.hour, minute=t.minute)
        return d
    return datetime.strptime(row[pos[schema.timestamp]].strip(), schema.timestamp_format)


@dataclass(frozen=True)
class SupervisedRow:
    t: int
    date: date
    day_counter: int
    x_lagged: tuple[float, ...]
    y_pm: float
    y_am: float

    @property
    def has_predictors(self) -> bool:
        return all(math.isfinite(v) for v in self.x_lagged)

    @property
    def complete(self) -> bool:
        """Usable by the 14:00 channel."""
        return self.has_predictors and math.isfinite(self.y_pm)


@dataclass(frozen=True, eq=False)
class SupervisedFrame:
    """Day-indexed rows pairing lagged predictors with same-day responses.

    Every calendar day of the window has a row; gaps show up as NaN entries
    rather than as absent rows.
    """

    rows: tuple[SupervisedRow, ...]
    lag_days: int
    start_date: date
    end_date: date

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def X(self) -> np.ndarray:
        if not self.rows:
            return np.empty((0, 8))
        return np.array([r.x_lagged for r in self.rows], dtype=np.float64)

    @property
    def y_pm(self) -> np.ndarray:
        return np.array([r.y_pm for r in self.rows], dtype=np.float64)

    @property
    def y_am(self) -> np.ndarray:
        return np.array([r.y_am for r in self.rows], dtype=np.float64)

    @property
    def dates(self) -> list[date]:
        return [r.date for r in self.rows]

    @property
    def complete_mask(self) -> np.ndarray:
        return np.array([r.complete for r in self.rows], dtype=bool)

    def complete_rows(self) -> tuple[np.ndarray, np.ndarray]:
        """(X, y_pm) restricted to rows usable by the 14:00 channel."""
        m = self.complete_mask
        return self.X[m], self.y_pm[m]

    def subset(self, mask) -> "SupervisedFrame":
        mask = np.asarray(mask, dtype=bool)
        rows = tuple(r for r, keep in zip(self.rows, mask) if keep)
        return SupervisedFrame(rows, self.lag_days, self.start_date, self.end_date)

    def equals(self, other: "SupervisedFrame") -> bool:
        if (self.lag_days, self.start_date, self.end_date, len(self)) != (
                other.lag_days, other.start_date, other.end_date, len(other)):
            return False
        for a, b in zip(self.rows, other.rows):
            if (a.t, a.date, a.day_counter) != (b.t, b.date, b.day_counter):
                return False
            va = np.array(a.x_lagged + (a.y_pm, a.y_am))
            vb = np.array(b.x_lagged + (b.y_pm, b.y_am))
            if not np.array_equal(va, vb, equal_nan=True):
                return False
        return True

    def to_csv(self, path_or_buf=None) -> str:
        """Canonical CSV: t, date, day_counter, x1..x8, y_pm, y_am.

        Missing values are empty fields; floats use ``repr`` so the file
        round-trips exactly.
        """
        out = io.StringIO()
        out.write(",".join(FRAME_COLUMNS) + "\n")
        for r in self.rows:
            cells = [str(r.t), r.date.isoformat(), str(r.day_counter)]
            cells += [_fmt(v) for v in r.x_lagged]
            cells += [_fmt(r.y_pm), _fmt(r.y_am)]
            out.write(",".join(cells) + "\n")
        text = out.getvalue()
        if path_or_buf is not None:
            if hasattr(path_or_buf, "write"):
                path_or_buf.write(text)
            else:
                with open(path_or_buf, "w", encoding="utf-8", newline="") as fh:
                    fh.write(text)
        return text


def _fmt(v: float) -> str:
    return "" if not math.isfinite(v) else repr(float(v))


def read_frame_csv(path_or_buf, lag_days: int = 14) -> SupervisedFrame:
    """Inverse of :meth:`SupervisedFrame.to_csv`."""
    fh, owned = _open_text(path_or_buf)
    try:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(h.strip() for h in header) != FRAME_COLUMNS:
            raise SchemaError("not a canonical frame CSV header")
        rows = []
        for rec in reader:
            if not rec:
                continue
            num = [math.nan if c == "" else float(c) for c in rec[3:]]
            rows.append(SupervisedRow(
                t=int(rec[0]),
                date=date.fromisoformat(rec[1]),
                day_counter=int(rec[2]),
                x_lagged=tuple(num[:8]),
                y_pm=num[8],
                y_am=num[9],
            ))
    finally:
        if owned:
            fh.close()
    if not rows:
        raise DataError("frame CSV has no rows")
    return SupervisedFrame(tuple(rows), lag_days, rows[0].date, rows[-1].date)


def build_frame(records: Iterable[WeatherRecord], lag_days: int,
                analysis_start: date, analysis_end: date) -> SupervisedFrame:
    """Align 14:00 predictors from ``lag_days`` earlier with each day's responses.

    One row per calendar day of ``[analysis_start, analysis_end]``. The day
    counter runs 1..T over the window. ``y_am`` is the 02:00 reading of the
    same calendar day.
    """
    if lag_days < 0:
        raise ValueError("lag_days must be >= 0")
    if analysis_end < analysis_start:
        raise DataError(f"empty analysis window {analysis_start}..{analysis_end}")
    pm: dict[date, WeatherRecord] = {}
    am: dict[date, WeatherRecord] = {}
    for rec in records:
        (pm if rec.hour == PM_HOUR else am)[rec.date] = rec

    n_days = (analysis_end - analysis_start).days + 1
    rows = []
    nan8 = (math.nan,) * 8
    for i in range(n_days):
        day = analysis_start + timedelta(days=i)
        t = i + 1
        lagged = pm.get(day - timedelta(days=lag_days))
        if lagged is not None:
            x = lagged.predictors() + (float(t),)
        else:
            x = nan8[:7] + (float(t),)
        today_pm = pm.get(day)
        today_am = am.get(day)
        rows.append(SupervisedRow(
            t=t,
            date=day,
            day_counter=t,
            x_lagged=x,
            y_pm=today_pm.air_temp if today_pm else math.nan,
            y_am=today_am.air_temp if today_am else math.nan,
        ))
    frame = SupervisedFrame(tuple(rows), lag_days, analysis_start, analysis_end)
    if not frame.complete_mask.any():
        raise DataError(
            f"no day in {analysis_start}..{analysis_end} has both a 14:00 response "
            f"and a complete {lag_days}-day-lagged predictor vector"
        )
    return frame


def empirical_quantile(values, q: float) -> float:
    """Sample quantile by linear interpolation at position 1 + q(n-1)."""
    a = np.asarray(values, dtype=np.float64).ravel()
    if a.size == 0:
        raise ValueError("empirical_quantile of an empty sequence")
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must be in (0, 1), got {q}")
    return float(np.quantile(a, q, method="linear"))
