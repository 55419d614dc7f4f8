import math
from datetime import date, timedelta

import numpy as np
import pytest
from hypothesis import given, strategies as st

from heatcast.ingest import SupervisedFrame, SupervisedRow
from heatcast.smoother import (
    LoessModel,
    LoessRegressor,
    constant_loess,
    fit_loess,
    pair_am_channel,
    predict_loess,
)
from oracles import loess_direct


def frame_of(y_am, start=date(2021, 6, 1)):
    rows = tuple(
        SupervisedRow(i + 1, start + timedelta(days=i), i + 1, (0.0,) * 7 + (float(i + 1),),
                      20.0, v)
        for i, v in enumerate(y_am))
    return SupervisedFrame(rows, 14, start, start + timedelta(days=len(rows) - 1))


@pytest.fixture
def quadratic(rng):
    x = np.sort(rng.uniform(0, 10, 20))
    y = 0.5 * x ** 2 - 3 * x + 1 + rng.normal(scale=0.5, size=20)
    return x, y


@pytest.mark.parametrize("span,degree", [(0.75, 2), (0.5, 1), (0.3, 2), (1.0, 1)])
def test_matches_weighted_least_squares_oracle(quadratic, span, degree):
    x, y = quadratic
    m = fit_loess(x, y, span=span, degree=degree)
    for x0 in np.linspace(x[0], x[-1], 15):
        assert predict_loess(m, x0).value == pytest.approx(
            loess_direct(x, y, x0, span, degree), abs=1e-8)


def test_full_span_linear_matches_ols_on_a_line(rng):
    x = rng.uniform(0, 5, 30)
    y = 2.0 - 1.5 * x
    m = fit_loess(x, y, span=1.0, degree=1)
    for x0 in (0.5, 2.0, 4.5):
        p = predict_loess(m, x0)
        assert p.value == pytest.approx(2.0 - 1.5 * x0, abs=1e-10)
        assert p.slope == pytest.approx(-1.5, abs=1e-10)


def test_extrapolation_is_linear_from_the_boundary(quadratic):
    x, y = quadratic
    m = fit_loess(x, y)
    edge = predict_loess(m, x[-1])
    assert not edge.extrapolated
    for dx in (0.5, 3.0):
        p = predict_loess(m, x[-1] + dx)
        assert p.extrapolated
        assert p.value == pytest.approx(edge.value + edge.slope * dx, rel=1e-12)
    low = predict_loess(m, x[0] - 1.0)
    first = predict_loess(m, x[0])
    assert low.extrapolated and low.value == pytest.approx(first.value - first.slope)


def test_input_errors():
    with pytest.raises(ValueError, match="distinct"):
        fit_loess([1.0, 1.0, 1.0, 1.0, 2.0], [1, 2, 3, 4, 5], degree=2)
    with pytest.raises(ValueError):
        fit_loess([1.0, 2.0], [1.0, 2.0], degree=1)
    with pytest.raises(ValueError):
        fit_loess([1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0], degree=1)
    with pytest.raises(ValueError):
        fit_loess([1.0, 2.0, 3.0, np.nan], [1.0, 2.0, 3.0, 4.0], degree=1)
    with pytest.raises(ValueError):
        fit_loess([1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0, 4.0], degree=3)


def test_constant_predictor_gives_local_mean():
    m = constant_loess([5.0] * 6, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    p = predict_loess(m, 5.0)
    assert p.value == pytest.approx(3.5) and p.slope == 0.0
    far = predict_loess(m, 9.0)
    assert far.extrapolated and far.value == pytest.approx(3.5)


def test_neighbourhood_never_below_degree_plus_two():
    m = fit_loess(np.arange(10.0), np.arange(10.0), span=0.05, degree=2)
    assert m.n_neighbors == 4


def test_json_round_trip(tmp_path, quadratic):
    x, y = quadratic
    m = fit_loess(x[::-1], y[::-1], span=0.6)
    m.to_json(tmp_path / "l.json")
    back = LoessModel.from_json(tmp_path / "l.json")
    assert all(predict_loess(back, v) == predict_loess(m, v) for v in (0.0, 3.3, 12.0))
    bad = m.to_dict()
    bad["x"] = bad["x"][::-1]
    with pytest.raises(ValueError):
        LoessModel.from_dict(bad)


@given(st.floats(-50, 50), st.floats(-3, 3), st.integers(0, 10_000))
def test_reproduces_lines(a, b, seed):
    x = np.random.default_rng(seed).uniform(-5, 5, 12)
    m = fit_loess(x, a + b * x, span=0.5, degree=1)
    for x0 in (-7.0, 0.0, 7.0):
        assert predict_loess(m, x0).value == pytest.approx(a + b * x0, abs=1e-7)


def test_pairing_uses_previous_afternoon():
    f = frame_of([10.0, 11.0, 12.0])
    x, y, idx = pair_am_channel(f, [1.0, 2.0, 3.0], min_pairs=1, return_index=True)
    assert x.tolist() == [1.0, 2.0] and y.tolist() == [11.0, 12.0]
    assert idx.tolist() == [1, 2]


def test_pairing_skips_missing_and_enforces_minimum():
    f = frame_of([10.0, math.nan, 12.0, 13.0])
    x, y = pair_am_channel(f, [1.0, 2.0, math.nan, 4.0], min_pairs=1)
    assert x.tolist() == [2.0]
    assert y.tolist() == [12.0]
    with pytest.raises(ValueError, match="usable"):
        pair_am_channel(f, [1.0, 2.0, 3.0, 4.0], min_pairs=5)
    with pytest.raises(ValueError):
        pair_am_channel(f, [1.0, 2.0])


def test_regressor(quadratic):
    x, y = quadratic
    est = LoessRegressor(span=0.5).fit(x.reshape(-1, 1), y)
    v, flag = est.predict_flagged([x[0], x[-1] + 1])
    assert flag.tolist() == [False, True]
    assert np.array_equal(est.predict([x[0], x[-1] + 1]), v)
