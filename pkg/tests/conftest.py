from __future__ import annotations

import numpy as np
import pytest

from cmjbranch import analysis as A
from cmjbranch.engine import run_ensemble
from cmjbranch.malthusian import derive_constants
from cmjbranch.reproduction import BernoulliSplit, Exponential

REFERENCE_LAW = BernoulliSplit(0.75, Exponential(1.0))
MAIN_SEED = 20240601
LIL_SEED = 77
C_DELTAS = (0.001, 0.5, 1.0, 2.0, 4.0, 8.0, 10.0, 11.0, 12.0, 14.0, 16.0, 20.0)

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def reference():
    return REFERENCE_LAW, derive_constants(REFERENCE_LAW)


@pytest.fixture(scope="session")
def main_ensemble(reference):
    """10^4 replicas of the reference law up to T = 20 on the grid k/10."""
    law, c = reference
    return run_ensemble(law, c, 20.0, [k / 10 for k in range(201)], 10_000, MAIN_SEED)


@pytest.fixture(scope="session")
def main_curve(reference, main_ensemble):
    return A.estimate_variance_curve(main_ensemble, reference[1])


@pytest.fixture(scope="session")
def main_table(reference, main_curve):
    law, c = reference
    rng = np.random.default_rng(np.random.SeedSequence(MAIN_SEED, spawn_key=(2**32,)))
    return A.compute_c_delta_table(law, c, main_curve, C_DELTAS, 200_000, rng)


@pytest.fixture(scope="session")
def lil_ensemble(reference):
    """600 replicas up to T = 26, recorded every 0.05 on [8, 14] and at 26."""
    law, c = reference
    grid = [round(8 + k * 0.05, 12) for k in range(121)] + [26.0]
    return run_ensemble(law, c, 26.0, grid, 600, LIL_SEED, max_births=50_000_000)


@pytest.fixture
def criterion():
    """Record one acceptance line, then assert it."""

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
