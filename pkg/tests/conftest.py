import numpy as np
import pytest
from hypothesis import settings

from rareflow.chain import StochasticMatrix, cyclic_walk

settings.register_profile("repo", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("repo")

THREE_STATE = [[0.0, 1.0, 0.0], [1 / 3, 0.0, 2 / 3], [1 / 3, 1 / 3, 1 / 3]]

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def three_state():
    return StochasticMatrix(THREE_STATE)


@pytest.fixture
def cycle6():
    return cyclic_walk(6)


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(number: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


def dense_stationary(P) -> np.ndarray:
    """Repeated squaring with row renormalisation; row 0 of the limit."""
    M = np.array(P, dtype=float)
    for _ in range(60):
        M = M @ M
        M /= M.sum(axis=1, keepdims=True)
    return M[0]


@pytest.fixture(scope="session")
def water():
    from rareflow.learn import saturated_water

    return saturated_water()


@pytest.fixture(scope="session")
def part_b(water):
    """Three-member risk ensemble on the bundled data with its stationary weights."""
    from rareflow.learn import PolynomialModel, RiskEnsemble, bootstrap_subsample

    model = PolynomialModel.standardized(2, water.x)
    subsets = bootstrap_subsample(water, 3, 7, False, seed=0)
    return RiskEnsemble.from_subsamples(water, subsets, model), np.array([0.25, 0.375, 0.375]), model, subsets
