import numpy as np
import pytest

from prunesim.treegen import generate_bank


@pytest.fixture(scope="session")
def bank():
    """Ten default trees; shared because growing them is the slow part."""
    return generate_bank(10, 0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
