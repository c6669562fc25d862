import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rareflow.chain import (StochasticMatrix, ergodicity_diagnostic, is_irreducible_aperiodic,
                            parse_matrix_text, stationary_distribution, stationary_gradient,
                            transitions_to_stationarity)
from rareflow.errors import ConvergenceError, NonErgodicError, ValidationError

from conftest import dense_stationary


def test_swap_matrix_is_periodic():
    P = [[0, 1], [1, 0]]
    assert not is_irreducible_aperiodic(P)
    assert ergodicity_diagnostic(P) == "periodic"


def test_three_state_matrix_is_ergodic(three_state):
    assert is_irreducible_aperiodic(three_state)


def test_identity_is_reducible():
    assert not is_irreducible_aperiodic(np.eye(3))
    assert ergodicity_diagnostic(np.eye(3)) == "reducible"


def test_row_sum_violation_names_the_row():
    with pytest.raises(ValidationError, match="row 1"):
        StochasticMatrix([[0.5, 0.5], [0.2, 0.7]])


def test_negative_entry_rejected():
    with pytest.raises(ValidationError, match="negative"):
        StochasticMatrix([[1.5, -0.5], [0.5, 0.5]])


def test_three_state_stationary(three_state):
    inv = stationary_distribution(three_state)
    np.testing.assert_allclose(inv.weights, [0.25, 0.375, 0.375], atol=1e-10)
    assert inv.residual <= 1e-13


def test_cycle_stationary_uniform(cycle6):
    np.testing.assert_allclose(stationary_distribution(cycle6).weights, np.full(6, 1 / 6), atol=1e-10)


def test_symmetric_two_state():
    np.testing.assert_allclose(stationary_distribution([[0.5, 0.5], [0.5, 0.5]]).weights, [0.5, 0.5], atol=1e-15)


@pytest.mark.parametrize("P, kind", [([[0, 1], [1, 0]], "periodic"), (np.eye(2), "reducible")])
def test_non_ergodic_error_carries_diagnostic(P, kind):
    with pytest.raises(NonErgodicError) as info:
        stationary_distribution(P)
    assert info.value.diagnostic == kind


def test_iteration_cap_reports_residual():
    eps = 1e-6
    P = [[1 - eps, eps], [3 * eps, 1 - 3 * eps]]
    with pytest.raises(ConvergenceError) as info:
        stationary_distribution(P, max_iter=10)
    assert info.value.residual > 0


def test_stationary_is_fast(three_state, cycle6):
    for P in (three_state, cycle6):
        best = min(_timed(lambda: stationary_distribution(P)) for _ in range(20))
        assert best < 1e-3


def _timed(fn):
    t = time.perf_counter()
    fn()
    return time.perf_counter() - t


def test_one_step_mixing():
    P = [[0.5, 0.5], [0.5, 0.5]]
    assert transitions_to_stationarity(P, [1.0, 0.0]) == 1
    assert transitions_to_stationarity(P, [0.3, 0.7]) == 1


# Frozen from a dense repeated-multiplication oracle (tests/conftest.dense_stationary + d @ P loop).
def test_three_state_mixing_count(three_state):
    assert transitions_to_stationarity(three_state, [1, 0, 0], 1e-3) == 10


def test_cycle_mixing_count(cycle6):
    n = transitions_to_stationarity(cycle6, np.eye(6)[0], 1e-3)
    assert n == 18
    assert n <= 10_000


def test_mixing_matches_dense_oracle(three_state):
    pi = dense_stationary(three_state.entries)
    d, n = np.array([0.0, 1.0, 0.0]), 0
    while np.abs(d - pi).sum() > 1e-6:
        d, n = d @ three_state.entries, n + 1
    assert transitions_to_stationarity(three_state, [0, 1, 0], 1e-6) == n


def test_matrix_text_with_fractions_and_comments():
    P = parse_matrix_text("# chain\n0 1 0\n1/3 0 2/3  # row two\n1/3 1/3 1/3\n")
    np.testing.assert_allclose(P[1], [1 / 3, 0, 2 / 3])


def _sigmoid(z):
    return 1 / (1 + np.exp(-z))


Q1 = np.array([[0.2, 0.8, 0.0], [0.3, 0.3, 0.4], [0.5, 0.1, 0.4]])
Q2 = np.array([[0.6, 0.2, 0.2], [0.1, 0.8, 0.1], [0.2, 0.2, 0.6]])


def _interpolated(x):
    s = _sigmoid(x[0] - 0.5 * x[1])
    return s * Q1 + (1 - s) * Q2


def test_constant_matrix_has_zero_gradient(three_state):
    assert np.array_equal(stationary_gradient(three_state, np.array([1.0, 2.0])), np.zeros((3, 2)))


def test_gradient_matches_richardson_oracle():
    P = StochasticMatrix(evaluator=_interpolated, size=3)
    x = np.array([0.3, -0.2])

    def central(h):
        g = np.empty((3, 2))
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            g[:, i] = (dense_stationary(_interpolated(x + e)) - dense_stationary(_interpolated(x - e))) / (2 * h)
        return g

    oracle = (4 * central(1e-3) - central(2e-3)) / 3
    np.testing.assert_allclose(stationary_gradient(P, x), oracle, atol=1e-6)


def test_gradient_zero_for_doubly_stochastic_family():
    D1 = np.array([[0.2, 0.5, 0.3], [0.5, 0.2, 0.3], [0.3, 0.3, 0.4]])
    D2 = np.array([[0.6, 0.2, 0.2], [0.2, 0.6, 0.2], [0.2, 0.2, 0.6]])
    P = StochasticMatrix(evaluator=lambda x: _sigmoid(x[0]) * D1 + (1 - _sigmoid(x[0])) * D2, size=3)
    assert np.max(np.abs(stationary_gradient(P, np.array([0.7])))) <= 1e-10


def test_gradient_fails_when_ergodicity_lost():
    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    P = StochasticMatrix(evaluator=lambda x: swap if x[0] > 0 else np.full((2, 2), 0.5), size=2)
    with pytest.raises(NonErgodicError):
        stationary_gradient(P, np.array([0.0]))


@st.composite
def ergodic_matrices(draw):
    K = draw(st.integers(2, 8))
    raw = np.array(draw(st.lists(st.floats(0, 1), min_size=K * K, max_size=K * K))).reshape(K, K)
    mask = np.array(draw(st.lists(st.booleans(), min_size=K * K, max_size=K * K))).reshape(K, K)
    M = raw * mask + 0.05 * np.eye(K) + 0.05 * np.roll(np.eye(K), 1, axis=1)
    return M / M.sum(axis=1, keepdims=True)


@given(ergodic_matrices())
def test_stationary_matches_dense_oracle(P):
    inv = stationary_distribution(P)
    assert np.max(np.abs(inv.weights @ P - inv.weights)) <= 1e-13
    np.testing.assert_allclose(inv.weights, dense_stationary(P), atol=1e-9)
    assert np.all(inv.weights > 0)
    assert abs(inv.weights.sum() - 1) <= 1e-12


@given(st.integers(2, 8), st.lists(st.floats(0.01, 1), min_size=3, max_size=3), st.integers(1, 7))
def test_doubly_stochastic_gives_uniform(K, w, shift):
    shift = shift % K or 1
    perms = [np.eye(K), np.roll(np.eye(K), 1, axis=1), np.roll(np.eye(K), shift, axis=1)]
    P = sum(wi * Pi for wi, Pi in zip(w, perms)) / sum(w)
    np.testing.assert_allclose(stationary_distribution(P).weights, np.full(K, 1 / K), atol=1e-10)


@given(ergodic_matrices(), st.randoms(use_true_random=False))
def test_relabeling_permutes_weights(P, rnd):
    perm = np.array(rnd.sample(range(P.shape[0]), P.shape[0]))
    Pp = P[np.ix_(perm, perm)]
    np.testing.assert_allclose(stationary_distribution(Pp).weights, stationary_distribution(P).weights[perm],
                               atol=1e-10)


@given(ergodic_matrices())
def test_mixing_monotone_in_tol(P):
    start = np.eye(P.shape[0])[0]
    counts = [transitions_to_stationarity(P, start, tol) for tol in (1e-1, 1e-3, 1e-6)]
    assert counts == sorted(counts)
