import numpy as np
import pytest

from moserbook.equilibria import critical_values
from moserbook.phase import SystemSpec


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def spec_half():
    """Equal masses, below the first critical value."""
    return SystemSpec(0.5, critical_values(0.5)[0] - 0.2)


@pytest.fixture(scope="session")
def spec_kepler():
    return SystemSpec(1.0, -2.0)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        for line in RESULTS[n].splitlines():
            terminalreporter.write_line(line)
