import io
import json
from datetime import date

import numpy as np
import pytest
from hypothesis import given, strategies as st

from heatcast.boosting import fit_boosting
from heatcast.conformal import (
    ChannelCalibration,
    ConformalMargin,
    ForecastInterval,
    ProbabilityRange,
    attach_conformal_margin,
    bonferroni_adjust,
    calibration_from_dict,
    calibration_to_dict,
    forecast_am,
    forecast_pm,
    intervals_to_csv,
    lower_bound_exceedance,
    read_intervals_csv,
)
from heatcast.forest import train_forest
from heatcast.smoother import predict_loess
from heatcast.tsdiag import WhitenessReport

ALPHAS = [0.05, 0.1, 0.2, 0.3, 0.5]


def manual_calibration(rng, scores):
    X = rng.normal(size=(40, 8))
    ens = fit_boosting(X, X[:, 0], X, X[:, 0], shrinkage=0.5, depth=2, max_trees=5)
    inputs = ens.predict(X)
    forest = train_forest(inputs.reshape(-1, 1), scores, n_trees=20, seed=0)
    white = WhitenessReport(0.0, 8, 1.0, 0.0, True, 8, "raw")
    return ChannelCalibration("PM", scores, inputs, forest, "fitted", ens, white), X


def test_zero_scores_collapse_to_the_point(rng):
    calib, X = manual_calibration(rng, np.zeros(40))
    for iv in forecast_pm(calib, X[:5], 0.1):
        assert iv.lower == iv.point == iv.upper and iv.length == 0.0


def test_interval_is_point_plus_score_quantiles(fitted_forecaster, small_years):
    pm = fitted_forecaster.pm_calibration_
    X = small_years[2].complete_rows()[0][:10]
    ivs = forecast_pm(pm, X, 0.3)
    q = pm.score_quantiles(fitted_forecaster.predict(X), 0.3)
    for iv, (lo, hi) in zip(ivs, q):
        assert iv.lower == iv.point + lo and iv.upper == iv.point + hi


def test_intervals_nest_as_alpha_shrinks(fitted_forecaster, small_years):
    X = small_years[2].complete_rows()[0][:15]
    for ch in ("PM", "AM"):
        per = [fitted_forecaster.predict_interval(X, a, channel=ch) for a in ALPHAS]
        for wide, narrow in zip(per, per[1:]):
            for w, n in zip(wide, narrow):
                assert w.lower <= n.lower and n.upper <= w.upper


def test_am_point_composes_loess_with_boosting(fitted_forecaster, small_years):
    f = fitted_forecaster
    X = small_years[2].complete_rows()[0][:10]
    ivs = forecast_am(f.pm_calibration_, f.am_calibration_, X, 0.1)
    for iv, pm in zip(ivs, f.predict(X)):
        p = predict_loess(f.am_calibration_.loess, pm)
        assert iv.point == p.value and iv.extrapolated == p.extrapolated
        assert iv.channel == "AM"


def test_single_vector_gives_single_interval(fitted_forecaster, small_years):
    x = small_years[2].complete_rows()[0][0]
    assert isinstance(forecast_pm(fitted_forecaster.pm_calibration_, x, 0.1), ForecastInterval)
    with pytest.raises(ValueError):
        forecast_pm(fitted_forecaster.pm_calibration_, x, 1.5)
    with pytest.raises(ValueError):
        forecast_pm(fitted_forecaster.am_calibration_, x, 0.1)


def test_bonferroni():
    assert bonferroni_adjust([0.1] * 4, global_alpha=0.1) == [0.025] * 4
    assert bonferroni_adjust([0.1, 0.3]) == pytest.approx([0.05, 0.15])
    assert bonferroni_adjust([0.2]) == [0.2]
    with pytest.raises(ValueError):
        bonferroni_adjust([])


def test_lower_bound_exceedance():
    iv = ForecastInterval(1, 30.0, 27.0, 33.0, 0.3)
    assert lower_bound_exceedance(iv, 27.0) == pytest.approx(0.85)
    assert lower_bound_exceedance(iv, 20.0) == pytest.approx(0.85)
    assert lower_bound_exceedance(iv, 34.0) == pytest.approx(0.15)
    mid = lower_bound_exceedance(iv, 30.0)
    assert isinstance(mid, ProbabilityRange) and mid == pytest.approx((0.15, 0.85))


def test_interval_validation():
    with pytest.raises(ValueError):
        ForecastInterval(1, 0.0, 1.0, -1.0, 0.1)
    with pytest.raises(ValueError):
        ForecastInterval(1, 0.0, -1.0, 1.0, 0.0)
    assert ForecastInterval(1, 0.0, -1.0, 1.0, 0.1).covers(1.0)


def test_margin_rank_and_small_sample():
    calib_pts = np.zeros(9)
    truths = np.arange(9.0)
    rng = np.random.default_rng(0)
    forest = train_forest(rng.normal(size=(30, 1)), np.zeros(30), n_trees=5)
    cm = ConformalMargin(calib_pts, truths)
    # k = ceil(0.8 * 10) = 8, so the 8th smallest excess 7.0
    assert cm.margin(forest, 0.2) == 7.0
    assert cm.margin(forest, 0.05) == np.inf


def test_negative_margin_never_inverts(rng):
    calib, X = manual_calibration(rng, rng.normal(size=40))
    pts = calib.ensemble.predict(X)
    tight = attach_conformal_margin(calib, pts, pts)
    plain = forecast_pm(calib, X, 0.3)
    for iv, ref in zip(forecast_pm(tight, X, 0.3), plain):
        assert iv.lower <= iv.upper
        assert iv.lower + iv.upper == pytest.approx(ref.lower + ref.upper, abs=1e-12)
    with pytest.raises(ValueError):
        attach_conformal_margin(calib, [], [])


@given(st.lists(st.tuples(st.floats(-1e6, 1e6), st.floats(0, 1e3), st.floats(0.001, 0.999),
                          st.booleans()), min_size=0, max_size=8))
def test_interval_csv_round_trip(specs):
    ivs = [ForecastInterval(i, p, p - w, p + w, a, "AM" if e else "PM",
                            date(2021, 5, 1) if e else None, e, "warn" if e else "")
           for i, (p, w, a, e) in enumerate(specs)]
    text = intervals_to_csv(ivs)
    assert read_intervals_csv(io.StringIO(text)) == ivs
    assert intervals_to_csv(read_intervals_csv(io.StringIO(text))) == text


def test_bad_interval_csv():
    with pytest.raises(ValueError):
        read_intervals_csv(io.StringIO("a,b\n"))


def test_calibration_serialization_round_trip(fitted_forecaster, small_years):
    f = fitted_forecaster
    X = small_years[2].complete_rows()[0][:20]
    pm = calibration_from_dict(json.loads(json.dumps(calibration_to_dict(f.pm_calibration_))),
                               f.ensemble_)
    am = calibration_from_dict(json.loads(json.dumps(calibration_to_dict(f.am_calibration_))),
                               f.ensemble_)
    for a in (0.1, 0.3):
        assert forecast_pm(pm, X, a) == forecast_pm(f.pm_calibration_, X, a)
        assert forecast_am(pm, am, X, a) == forecast_am(f.pm_calibration_,
                                                        f.am_calibration_, X, a)
    assert pm.summary() == f.pm_calibration_.summary()
    with pytest.raises(ValueError):
        calibration_from_dict({"format": "x"}, f.ensemble_)


def test_calibrated_forecaster_attaches_margins(small_years):
    from heatcast.pipeline import HeatForecaster

    _, train, test, _ = small_years
    f = HeatForecaster(shrinkage=0.05, max_trees=100, qrf_n_trees=30, calibrated=True)
    f.fit(train, test)
    assert f.pm_calibration_.conformal is not None
    assert f.am_calibration_.conformal is not None
    held = f.pm_calibration_.conformal.points.size
    t = np.array([r.t for r in train.rows])
    assert held == np.sum(train.complete_mask & (((t - 1) // 14) % 2 == 1))
