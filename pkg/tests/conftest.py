import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Acceptance results, printed as a block at the end of the run.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
