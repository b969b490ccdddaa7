import numpy as np
import pytest

ACCEPTANCE_LINES: list[str] = []


def report(line: str) -> None:
    """Record an acceptance verdict; echoed now and again in the summary."""
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def canonical():
    from epsensing import SensorParams, build_model

    return build_model(SensorParams())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
