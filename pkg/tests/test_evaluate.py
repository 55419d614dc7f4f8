import io
import math
from datetime import date, timedelta
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from heatcast.conformal import ForecastInterval
from heatcast.evaluate import (
    coverage_audit,
    fit_series_export,
    summarize_intervals,
    table1_csv,
    table1_summaries,
    top_decile,
)
from heatcast.ingest import SupervisedFrame, SupervisedRow

GOLDEN = Path(__file__).parent / "golden"


def iv(point, length, alpha=0.1, channel="PM", t=1):
    return ForecastInterval(t, point, point - length / 2, point + length / 2, alpha, channel)


def table1_fixture():
    ivs = [iv(p, p / 5, 0.1) for p in range(1, 21)]
    ivs += [iv(p, {19: 2.2}.get(p, p / 10), 0.3) for p in range(1, 21)]
    ivs += [iv(float(p), 1.0, 0.1, "AM") for p in range(1, 9)]
    ivs += [iv(10.0, 3.0, 0.1, "AM"), iv(10.0, 5.0, 0.1, "AM")]
    return ivs


def test_single_interval_summary():
    s = summarize_intervals([ForecastInterval(1, 30.0, 27.5, 32.5, 0.1)])
    assert (s.min_len, s.mean_len, s.max_len, s.n) == (5.0, 5.0, 5.0, 1)


def test_summary_errors():
    with pytest.raises(ValueError):
        summarize_intervals([])
    with pytest.raises(ValueError):
        summarize_intervals([iv(1, 1), iv(2, 1, alpha=0.3)])
    with pytest.raises(ValueError):
        summarize_intervals([iv(1, 1), iv(2, 1, channel="AM")])
    with pytest.raises(ValueError):
        summarize_intervals([iv(1, 1)], subset="best")


@given(st.lists(st.tuples(st.floats(-100, 100), st.floats(0, 50)), min_size=1, max_size=40),
       st.randoms())
def test_summary_order_invariant_and_bounded(pairs, rnd):
    ivs = [iv(p, w) for p, w in pairs]
    s = summarize_intervals(ivs)
    shuffled = list(ivs)
    rnd.shuffle(shuffled)
    assert summarize_intervals(shuffled) == s
    assert s.min_len <= s.mean_len <= s.max_len
    top = summarize_intervals(ivs, "top_decile")
    assert 1 <= top.n <= s.n


def test_top_decile_keeps_ties():
    ivs = [iv(float(p), 1.0) for p in range(1, 20)] + [iv(19.0, 2.0)]
    assert len(top_decile(ivs)) == 2
    assert [i.point for i in top_decile([iv(3.0, 1.0)] * 5)] == [3.0] * 5


def test_table1_matches_golden_file():
    text = table1_csv(table1_summaries(table1_fixture()))
    assert text == (GOLDEN / "table1_small.csv").read_text()


def test_table1_written_to_file(tmp_path):
    table1_csv(table1_summaries(table1_fixture()), tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text() == (GOLDEN / "table1_small.csv").read_text()


def test_coverage_audit():
    ivs = [iv(0.0, 2.0, 0.1), iv(0.0, 2.0, 0.1, "AM"), iv(0.0, 2.0, 0.3), iv(0.0, 2.0, 0.3)]
    rep = coverage_audit(ivs, [1.0, 1.5, -1.0, math.nan])
    assert rep.coverage == pytest.approx(2 / 3) and rep.n == 3 and rep.n_missing == 1
    assert rep.by_alpha[0.1] == {"coverage": 0.5, "n": 2}
    assert rep.by_channel_alpha[("PM", 0.3)] == {"coverage": 1.0, "n": 1}
    d = rep.to_dict()
    assert d["by_channel_alpha"]["AM@0.1"]["coverage"] == 0.0
    with pytest.raises(ValueError):
        coverage_audit(ivs, [1.0])


def frame_for(days, start=date(2021, 5, 20), pm=None):
    rows = []
    for i in range(days):
        v = 20.0 if pm is None else pm[i]
        rows.append(SupervisedRow(i + 1, start + timedelta(days=i), i + 1,
                                  (0.0,) * 7 + (float(i + 1),), v, v - 8))
    return SupervisedFrame(tuple(rows), 14, start, start + timedelta(days=days - 1))


def test_fit_series_constant_input():
    f = frame_for(30)
    fs = fit_series_export(f, np.full(30, 19.0))
    assert np.allclose(fs.smoothed_observed, 20.0) and np.allclose(fs.smoothed_fitted, 19.0)
    assert fs.q90_line == 20.0
    am = fit_series_export(f, np.full(30, 11.0), channel="AM")
    assert np.allclose(am.smoothed_observed, 12.0)


def test_fit_series_summer_window_and_quantile():
    f = frame_for(140, pm=list(np.arange(140.0)))
    fs = fit_series_export(f, f.y_pm, summer_only=True)
    assert fs.dates[0] == date(2021, 6, 1) and fs.dates[-1] == date(2021, 9, 30)
    shown = np.array(fs.observed)
    assert fs.q90_line == pytest.approx(np.quantile(shown, 0.9))
    assert np.allclose(fs.smoothed_observed, shown)
    text = fs.to_csv()
    assert text.splitlines()[0] == "date,observed,fitted,smoothed_observed,smoothed_fitted,q90_line"
    assert len(text.splitlines()) == len(fs.dates) + 1


def test_fit_series_gaps_and_errors():
    f = frame_for(20)
    fitted = np.full(20, 18.0)
    fitted[3] = np.nan
    fs = fit_series_export(f, fitted)
    assert math.isnan(fs.smoothed_fitted[3])
    assert fs.to_csv().splitlines()[4].split(",")[2] == ""
    with pytest.raises(ValueError):
        fit_series_export(f, fitted[:5])
    with pytest.raises(ValueError):
        fit_series_export(f, fitted, channel="XX")
