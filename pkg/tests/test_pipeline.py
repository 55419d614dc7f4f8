import numpy as np
import pytest
from sklearn.base import clone

from heatcast.pipeline import STAGES, HeatForecaster, derive_seeds


def test_stage_seeds_are_distinct_and_stable():
    s = derive_seeds(0)
    assert tuple(s) == STAGES and len(set(s.values())) == 3
    assert derive_seeds(0) == s and derive_seeds(1) != s


def test_fit_is_reproducible(small_years, fitted_forecaster):
    _, train, test, _ = small_years
    again = clone(fitted_forecaster).fit(train, test)
    X = test.complete_rows()[0]
    assert np.array_equal(again.predict(X), fitted_forecaster.predict(X))
    a, _ = again.forecast_frame(test, [0.1])
    b, _ = fitted_forecaster.forecast_frame(test, [0.1])
    assert a == b


def test_forecast_frame_targets(small_years, fitted_forecaster):
    _, _, test, _ = small_years
    ivs, truths = fitted_forecaster.forecast_frame(test, [0.1, 0.3])
    n = int(np.all(np.isfinite(test.X), axis=1).sum())
    assert len(ivs) == truths.size == 4 * n
    pm = [iv for iv in ivs if iv.channel == "PM" and iv.alpha == 0.1]
    am = [iv for iv in ivs if iv.channel == "AM" and iv.alpha == 0.1]
    assert all(a.t_index == p.t_index + 1 for p, a in zip(pm, am))
    assert all((a.date - p.date).days == 1 for p, a in zip(pm, am))
    by_date = dict(zip(test.dates, test.y_am))
    am_truths = truths[n:2 * n]
    for a, y in zip(am, am_truths):
        ref = by_date.get(a.date, np.nan)
        assert (np.isnan(y) and np.isnan(ref)) or y == ref
    # the last day's night falls outside the window
    assert np.isnan(am_truths[-1])


def test_simultaneous_levels(small_years, fitted_forecaster):
    _, _, test, _ = small_years
    ivs, _ = fitted_forecaster.forecast_frame(test, [0.1, 0.3], simultaneous=True)
    assert sorted({iv.alpha for iv in ivs}) == pytest.approx([0.05, 0.15])
    assert {iv.family_alpha for iv in ivs} == {0.1, 0.3}


def test_predict_am_matches_intervals(small_years, fitted_forecaster):
    X = small_years[2].complete_rows()[0][:5]
    pts = [iv.point for iv in fitted_forecaster.predict_interval(X, 0.1, channel="AM")]
    assert np.array_equal(fitted_forecaster.predict_am(X), pts)
    with pytest.raises(ValueError):
        fitted_forecaster.predict_interval(X, 0.1, channel="noon")


def test_calibration_settings_validated(small_years):
    _, train, test, _ = small_years
    with pytest.raises(ValueError):
        HeatForecaster(calibrated=True, calibration_every=1, max_trees=5).fit(train, test)


def test_observed_score_predictor(small_years):
    _, train, test, _ = small_years
    f = HeatForecaster(shrinkage=0.05, max_trees=100, qrf_n_trees=30,
                       score_predictor="observed").fit(train, test)
    pm = f.pm_calibration_
    k = int(train.complete_mask.sum()) - pm.scores.size
    assert np.array_equal(pm.score_inputs, train.complete_rows()[1][k:])
    assert any("observed" in n for n in pm.notes)
