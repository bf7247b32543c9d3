"""Shared fixtures: small models and session-scoped quantizer designs.

The designs use reduced Monte-Carlo budgets; tests that need the published
tolerance bands run their own full-budget calibrations.
"""
import pytest

from cusumlab.model import SensorModel
from cusumlab.quantizer import design_for_model

# PASS/FAIL lines collected by the acceptance tests, replayed after the
# run summary so they are visible without -s.
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def m1():
    return SensorModel.gaussian([1.0])


@pytest.fixture(scope="session")
def m2():
    return SensorModel.gaussian([1.0, 1.0])


@pytest.fixture(scope="session")
def m5():
    return SensorModel.gaussian([1.0] * 5)


@pytest.fixture(scope="session")
def m12():
    return SensorModel.gaussian([1.0, 2.0])


@pytest.fixture(scope="session")
def q1_r3_d2(m1):
    """Single-sensor design, r=3, d=2, reduced budget."""
    return design_for_model(m1, 3, 2, seed=42, delta_reps=200_000,
                            level_reps=400_000, llr_reps=400_000)[0]


@pytest.fixture(scope="session")
def q2_r3_d1(m2):
    """Two-sensor design, r=3, d=1, reduced budget."""
    return design_for_model(m2, 3, 1, seed=42, delta_reps=150_000,
                            level_reps=200_000, llr_reps=200_000)


@pytest.fixture(scope="session")
def q5_r3_d2(m5):
    """Five-sensor design, r=3, d=2, reduced budget."""
    return design_for_model(m5, 3, 2, seed=42, delta_reps=200_000,
                            level_reps=400_000, llr_reps=400_000)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
