"""Shared fixtures and the acceptance summary printed at the end of a run."""
from __future__ import annotations

import numpy as np
import pytest

from levy_bsde.levy import LevyModel, TimeGrid, brownian_model, noiseless_model, simulate_forward

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record_acceptance():
    """Store a criterion verdict; the terminal summary prints one line per criterion."""

    def record(number: int, passed: bool, detail: str = "") -> None:
        ACCEPTANCE[number] = (bool(passed), detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def jump_model() -> LevyModel:
    """Scalar model with one Brownian driver and two jump atoms of opposite sign."""
    return LevyModel(1, 1, [0.0], [[1.0]], [[1.0], [-0.5]], [1.0, 2.0])


@pytest.fixture(scope="session")
def jump_grid() -> TimeGrid:
    return TimeGrid.uniform(1.0, 25)


@pytest.fixture(scope="session")
def jump_ensemble(jump_model, jump_grid):
    return simulate_forward(jump_model, jump_grid, 5000, 11)


@pytest.fixture(scope="session")
def bm_model() -> LevyModel:
    return brownian_model()


@pytest.fixture(scope="session")
def bm_ensemble(bm_model):
    return simulate_forward(bm_model, TimeGrid.uniform(1.0, 20), 4000, 5)


@pytest.fixture(scope="session")
def quiet_model() -> LevyModel:
    return noiseless_model()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
