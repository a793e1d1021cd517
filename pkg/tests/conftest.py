from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from eternalflow.cli import flow_line, load_scenario
from eternalflow.flowline import TimeGrid, integrate_flowline
from eternalflow.metric import Bump, MetricField
from eternalflow.sphere import BandBasis, build_grid

settings.register_profile("default", deadline=None, max_examples=25, derandomize=True)
settings.load_profile("default")

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


@pytest.fixture(scope="session")
def shipped():
    return load_scenario(SCENARIOS / "shipped.ini")


@pytest.fixture(scope="session")
def euclidean():
    return load_scenario(SCENARIOS / "euclidean.ini")


@pytest.fixture(scope="session")
def shipped_metric(shipped):
    return shipped.metric()


@pytest.fixture(scope="session")
def shipped_line(shipped):
    return flow_line(shipped)


@pytest.fixture(scope="session")
def small_basis():
    return BandBasis(build_grid(2, 10), 5)


@pytest.fixture(scope="session")
def flat_line():
    metric = MetricField(3, "euclidean")
    return integrate_flowline(metric, np.zeros(3), TimeGrid(2.0, 9, margin=0.5))


@pytest.fixture(scope="session")
def sphere_line():
    metric = MetricField(3, "space_form", kappa=1.0)
    return integrate_flowline(metric, np.zeros(3), TimeGrid(2.0, 9, margin=0.5))


@pytest.fixture(scope="session")
def radial_bump_line():
    """Rotationally symmetric conformal metric, constant line at its centre."""
    metric = MetricField(3, "conformal", bumps=(Bump((0.0, 0.0, 0.0), 0.8, (((0, 0, 0), -0.15),)),))
    return integrate_flowline(metric, np.zeros(3), TimeGrid(2.0, 9, margin=0.5))


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for name in sorted(RESULTS):
            terminalreporter.write_line(f"{name}: {'PASS' if RESULTS[name] else 'FAIL'}")
