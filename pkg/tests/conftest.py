import math

import pytest

from nutsim import SpinSystem

TWO_PI = 2 * math.pi


@pytest.fixture
def pair_perp():
    return SpinSystem.pair(-TWO_PI * 5e3, math.pi / 2, 0.0)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
