import io

import numpy as np
import pytest
from scipy.stats import norm

from heatcast.ingest import build_frame, parse_station_csv
from heatcast.synth import (
    ScenarioSpec,
    oracle_am,
    oracle_pm,
    synth_generate,
    synth_years,
    write_station_csv,
)


def test_shapes_and_determinism():
    spec = ScenarioSpec(n_days=60)
    tr, te, _ = synth_generate(spec, seed=5)
    tr2, te2, _ = synth_generate(spec, seed=5)
    assert len(tr) == len(te) == 60
    assert tr.equals(tr2) and te.equals(te2)
    assert not tr.equals(synth_generate(spec, seed=6)[0])
    assert tr.complete_mask.all()
    assert tr.start_date == spec.train_start and te.start_date == spec.test_start


def test_oracle_quantile_is_calibrated():
    spec = ScenarioSpec(n_days=183)
    hits, n = 0, 0
    for seed in range(6):
        tr, _, oracle = synth_generate(spec, seed=seed)
        X, y = tr.complete_rows()
        hits += np.sum(y <= oracle(X))
        n += y.size
    assert hits / n == pytest.approx(0.9, abs=0.025)


def test_oracle_levels_are_ordered():
    spec = ScenarioSpec()
    X = synth_generate(ScenarioSpec(n_days=40), seed=1)[0].complete_rows()[0]
    assert np.all(oracle_pm(spec, X, 0.5) < oracle_pm(spec, X, 0.9))
    med = oracle_am(spec, X, 0.5)
    assert np.allclose(oracle_am(spec, X, 0.9) - med, norm.ppf(0.9) * spec.am_noise_sd)


def test_station_csv_round_trip_rebuilds_frame():
    spec = ScenarioSpec(n_days=30)
    year, _ = synth_years(spec, seed=2)
    recs = parse_station_csv(io.StringIO(write_station_csv(year.records)))
    frame = build_frame(recs, spec.lag_days, year.frame.start_date, year.frame.end_date)
    assert frame.equals(year.frame)


@pytest.mark.parametrize("kw", [{"n_days": 1}, {"noise_phi": 1.0}, {"tau": 1.0},
                                {"noise_sd": -1.0}, {"lag_days": 0}])
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        synth_generate(ScenarioSpec(**kw))


def test_from_mapping():
    spec = ScenarioSpec.from_mapping({"n_days": "90", "noise_phi": "0.3"})
    assert spec.n_days == 90 and spec.noise_phi == 0.3
    with pytest.raises(ValueError):
        ScenarioSpec.from_mapping({"bogus": "1"})
