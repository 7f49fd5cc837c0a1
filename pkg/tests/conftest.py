import numpy as np
import pytest

from fedwater.experiment import build_clients
from fedwater.ingest import Month, SyntheticFleetConfig, generate_synthetic_fleet
from fedwater.lstm import ModelWeights, parameter_count


@pytest.fixture
def small_fleet():
    cfg = SyntheticFleetConfig(n_buildings=4, n_months=36, rng_seed=3)
    return generate_synthetic_fleet(cfg)


@pytest.fixture
def small_clients(small_fleet):
    return build_clients(small_fleet, Month(2015, 1), lookback=4)


def random_weights(rng, hidden_size, scale=0.5):
    return ModelWeights(hidden_size, rng.normal(0.0, scale, parameter_count(hidden_size)))


def relative_errors(analytic, numeric, floor=1e-8):
    """Componentwise relative error; tiny components get absolute error."""
    diff = np.abs(analytic - numeric)
    small = np.abs(analytic) + np.abs(numeric) < floor
    scale = np.where(small, 1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return diff / scale, small


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
