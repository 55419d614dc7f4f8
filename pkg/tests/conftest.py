import logging
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

logging.getLogger("heatcast").setLevel(logging.ERROR)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_years():
    """A short synthetic train/test pair shared by the slower pipeline tests."""
    from heatcast.synth import ScenarioSpec, synth_generate

    spec = ScenarioSpec(n_days=120)
    train, test, oracle = synth_generate(spec, seed=7)
    return spec, train, test, oracle


@pytest.fixture(scope="session")
def fitted_forecaster(small_years):
    """A quick-to-fit forecaster on the shared synthetic years."""
    from heatcast.pipeline import HeatForecaster

    _, train, test, _ = small_years
    est = HeatForecaster(shrinkage=0.05, max_trees=200, qrf_n_trees=60, random_state=1)
    return est.fit(train, test)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
