from __future__ import annotations

import numpy as np
import pytest

from wavelab.evolve import Grid, Propagator, StepPlan
from wavelab.geometry import Scenario, bump_metric, flat_metric
from wavelab.lab.scenarios import builtin


@pytest.fixture(scope="session")
def tiny1d():
    return builtin("tiny1d").propagator()


@pytest.fixture(scope="session")
def free1d():
    sc = Scenario(flat_metric(1, 1.0, 1.0))
    g = Grid(1, 200, 5.0)
    return Propagator(sc, g, StepPlan.for_scenario(sc, g, cfl=1.0))


@pytest.fixture(scope="session")
def pulsing2d():
    sc = Scenario(bump_metric(2, 1.0, 1.0, 0.3, 0.2))
    g = Grid(2, 24, 2.6)
    return Propagator(sc, g, StepPlan.for_scenario(sc, g))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def criterion():
    """Record ``(number, title, passed, detail)`` for the end-of-run acceptance table."""

    def record(number: int, title: str, passed: bool, detail: str = "") -> bool:
        ACCEPTANCE[number] = (title, bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {title}: {detail}")
