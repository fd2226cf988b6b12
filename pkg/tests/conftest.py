import numpy as np
import pytest

from qcool.model import ControlGains, SystemParams

_ACCEPTANCE = []


@pytest.fixture
def acceptance_log():
    """Collects one status line per acceptance criterion for the summary."""
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture
def unit_params():
    return SystemParams(alpha=0.3)


@pytest.fixture
def cooling_gains():
    return ControlGains(0.0, -1.35)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
