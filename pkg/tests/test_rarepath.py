import numpy as np
import pytest
from scipy.integrate import solve_bvp
from scipy.stats import norm

from rareflow.action import action, hamiltonian_flow_residual
from rareflow.chain import cyclic_walk, stationary_distribution
from rareflow.ensemble import DiscretePath, LinearDriftEnsemble
from rareflow.errors import CensoredError, ConvergenceError, PreconditionError, ValidationError
from rareflow.learn import (LeastSquaresRisk, PolynomialModel, RiskEnsemble, bootstrap_subsample,
                            holdout_sample)
from rareflow.rarepath import (GaussianBump, MCRow, QuadraticTerminal, RareEventProblem, check_terminal_gradient,
                               ldp_log_probability, mc_rare_probability, smallest_uncensored, solve_constrained,
                               solve_rare_event)

DECAY = LinearDriftEnsemble([[[-1.0]]])
X0, TARGET, LAM, HORIZON = 1.0, 3.0, 2.0, 1.0
OU_VARIANCE = (1 - np.exp(-2.0)) / 2  # Var(X_1) / eps for dX = -X dt + sqrt(eps) dW


def lq_problem(dt, lam=LAM):
    return RareEventProblem(DECAY, [1.0], QuadraticTerminal([TARGET]), 0.5, lam, [X0], HORIZON, dt)


def lq_closed_form(t, lam=LAM):
    """phi' = -phi + psi, psi' = psi, phi(0) = x0, psi(T) = -lam (phi(T) - a)."""
    g = np.exp(-HORIZON) * np.sinh(HORIZON)
    xT = (X0 * np.exp(-HORIZON) + lam * TARGET * g) / (1 + lam * g)
    pT = -lam * (xT - TARGET)
    return X0 * np.exp(-t) + pT * np.exp(-HORIZON) * np.sinh(t), pT * np.exp(t - HORIZON)


def bump_problem(lam=1.0, zeta=0.02, dt=0.01):
    return RareEventProblem(DECAY, [1.0], GaussianBump([0.0], 0.2), zeta, lam, [0.0], 1.0, dt)


def line_guess(end, T=1.0, dt=0.01, x0=0.0):
    return DiscretePath.from_function(lambda t: x0 + (end - x0) * t / T, T, dt)


def test_closed_form_oracle_matches_boundary_value_solver():
    t = np.linspace(0, HORIZON, 101)
    sol = solve_bvp(lambda s, y: np.vstack([-y[0] + y[1], y[1]]),
                    lambda ya, yb: np.array([ya[0] - X0, yb[1] + LAM * (yb[0] - TARGET)]),
                    np.linspace(0, HORIZON, 11), np.zeros((2, 11)), tol=1e-10)
    phi, psi = lq_closed_form(t)
    assert np.max(np.abs(sol.sol(t)[0] - phi)) < 1e-8
    assert np.max(np.abs(sol.sol(t)[1] - psi)) < 1e-8


@pytest.mark.parametrize("engine", ["auto", "python"])
def test_linear_quadratic_matches_closed_form(engine):
    res = solve_rare_event(lq_problem(1e-3), engine=engine)
    phi, psi = lq_closed_form(res.phi.times)
    assert np.max(np.abs(res.phi.values[:, 0] - phi)) <= 1e-4
    assert np.max(np.abs(res.psi.values[:, 0] - psi)) <= 1e-4
    assert res.update_norm <= 1e-8
    assert res.action.value >= 0


def test_engines_agree():
    a = solve_rare_event(lq_problem(1e-2), engine="auto")
    b = solve_rare_event(lq_problem(1e-2), engine="python")
    np.testing.assert_allclose(a.phi.values, b.phi.values, atol=1e-12)
    np.testing.assert_allclose(a.psi.values, b.psi.values, atol=1e-12)


def test_zero_penalty_is_unperturbed_flow():
    for dt in (1e-2, 5e-3):
        res = solve_rare_event(lq_problem(dt, lam=0.0))
        assert np.all(res.psi.values == 0.0)
        assert res.iterations <= 2
        np.testing.assert_allclose(res.phi.values[:, 0], X0 * np.exp(-res.phi.times), atol=1e-8)
        assert res.action.value <= 10 * dt**2


def test_update_norms_non_increasing():
    for lam in (0.5, 2.0, 8.0):
        res = solve_rare_event(lq_problem(1e-2, lam=lam))
        assert np.all(np.diff(res.history[1:]) <= 0)


def test_penalty_continuity_towards_flow():
    flow = X0 * np.exp(-np.arange(101) * 1e-2)
    gaps = [np.max(np.abs(solve_rare_event(lq_problem(1e-2, lam)).phi.values[:, 0] - flow))
            for lam in (1e-2, 1e-3, 1e-4)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 2e-4


def test_converged_pair_residual_second_order():
    worst = []
    for dt in (1e-2, 5e-3):
        res = solve_rare_event(lq_problem(dt))
        r = hamiltonian_flow_residual(res.phi, res.psi, DECAY, [1.0])
        worst.append(max(r.phi_norm.max(), r.psi_norm.max()))
        assert worst[-1] <= 1.0 * dt**2
    assert worst[0] / worst[1] > 3.5


def test_bump_constrained_solve_meets_constraint():
    pb = bump_problem()
    res = solve_constrained(pb, line_guess(0.6))
    assert pb.zeta * (1 - 1e-3) <= res.terminal_value <= pb.zeta
    R = pb.terminal.escape_radius(pb.zeta)
    assert res.action.value == pytest.approx(R**2 / (2 * OU_VARIANCE), rel=1e-3)


def test_descent_from_admissible_guesses():
    pb = bump_problem()
    R = pb.terminal.escape_radius(pb.zeta)
    gen = np.random.default_rng(7)
    t = np.arange(101) * 0.01
    for _ in range(20):
        end = R * gen.uniform(1.05, 1.6) * gen.choice([-1.0, 1.0])
        wiggle = gen.normal(0, 0.2) * np.sin(np.pi * t * gen.integers(1, 4))
        guess = DiscretePath(((end * t) + wiggle)[:, None], 0.01)
        assert pb.terminal(guess.values[-1]) <= pb.zeta
        res = solve_constrained(pb, guess)
        assert res.terminal_value <= pb.zeta
        assert res.action.value <= action(guess, DECAY, [1.0]).value


def test_constrained_returns_free_flow_when_admissible():
    pb = lq_problem(1e-2)
    pb.zeta = 10.0
    res = solve_constrained(pb)
    assert res.lam == 0.0
    assert res.terminal_value <= 10.0


def test_constrained_needs_positive_threshold():
    with pytest.raises(ValidationError):
        solve_constrained(bump_problem(zeta=0.0))


@pytest.fixture(scope="module")
def part_a_problem(water):
    model = PolynomialModel.standardized(2, water.x)
    subsets = bootstrap_subsample(water, 6, 18, True, 0)
    ensemble = RiskEnsemble.from_subsamples(water, subsets, model)
    hold = holdout_sample(water, 9, 1)
    pi = stationary_distribution(cyclic_walk(6)).weights
    return RareEventProblem(ensemble, pi, LeastSquaresRisk(model, water.x[hold], water.y[hold]), 1e-4, 1.0,
                            np.zeros(3), 10.0, 0.01)


def test_part_a_validation_level(part_a_problem):
    res = solve_constrained(part_a_problem)
    assert res.terminal_value <= 1e-4
    assert res.action.value >= 0


def test_terminal_gradients_match_differences():
    gen = np.random.default_rng(3)
    pts = gen.normal(size=(20, 2))
    assert check_terminal_gradient(QuadraticTerminal([1.0, -2.0], [[2.0, 0.5], [0.5, 1.0]]), pts) <= 1e-5
    assert check_terminal_gradient(GaussianBump([0.3, 0.1], 0.7), 0.5 * pts) <= 1e-5


def test_part_a_terminal_gradient(part_a_problem):
    pts = np.random.default_rng(4).normal(size=(10, 3))
    assert check_terminal_gradient(part_a_problem.terminal, pts) <= 1e-5


def test_escape_radius_is_level_set():
    bump = GaussianBump([0.0], 0.2)
    assert bump([bump.escape_radius(0.02)]) == pytest.approx(0.02, rel=1e-12)


def test_ldp_log_probability_examples():
    assert ldp_log_probability(0.0, 0.3).exponent == 0.0
    est = ldp_log_probability(1.0, 0.1)
    assert est.exponent == pytest.approx(-10.0, rel=1e-15)
    assert est.caveat == "log-asymptotic only"
    with pytest.raises(ValidationError):
        ldp_log_probability(1.0, 0.0)


def test_mc_certain_event():
    rows = mc_rare_probability(bump_problem(zeta=1.5), [0.1], 10_000, 0)
    assert rows[0].probability == 1.0
    assert rows[0].rescaled_log == 0.0


def test_mc_matches_gaussian_tail():
    pb = bump_problem()
    R = pb.terminal.escape_radius(pb.zeta)
    eps = 0.2
    row = mc_rare_probability(pb, [eps], 10_000, 1)[0]
    exact = 2 * norm.sf(R / np.sqrt(eps * OU_VARIANCE))
    assert abs(row.probability - exact) <= 3 * np.sqrt(exact * (1 - exact) / row.trials)


def test_mc_reproducible():
    a = mc_rare_probability(bump_problem(), [0.2], 10_000, 5)
    b = mc_rare_probability(bump_problem(), [0.2], 10_000, 5)
    assert a == b


def test_mc_all_censored_raises():
    with pytest.raises(CensoredError):
        mc_rare_probability(bump_problem(zeta=1e-300), [0.01], 10_000, 0)


def test_mc_needs_enough_trials():
    with pytest.raises(PreconditionError):
        mc_rare_probability(bump_problem(), [0.2], 9_999, 0)


def test_censored_rows():
    rows = [MCRow(0.1, 10_000, 0, 0.01), MCRow(0.2, 10_000, 30, 0.01)]
    assert rows[0].rescaled_log is None
    assert smallest_uncensored(rows).eps == 0.2
    with pytest.raises(CensoredError):
        smallest_uncensored(rows[:1])


def test_invalid_relaxation():
    with pytest.raises(ValidationError):
        solve_rare_event(lq_problem(1e-2), relaxation=0.0)
    with pytest.raises(ValidationError):
        solve_rare_event(lq_problem(1e-2), relaxation=1.5)


def test_guess_must_start_at_initial_point():
    with pytest.raises(PreconditionError):
        solve_rare_event(lq_problem(1e-2), line_guess(2.0, x0=0.5))


def test_guess_grid_must_match():
    with pytest.raises(ValidationError):
        solve_rare_event(lq_problem(1e-2), line_guess(2.0, dt=0.02, x0=X0))


def test_iteration_cap_reports_last_change():
    with pytest.raises(ConvergenceError) as info:
        solve_rare_event(lq_problem(1e-2), max_iter=1)
    assert info.value.residual is not None


def test_divergence_raises():
    growth = LinearDriftEnsemble([[[3.0]]])
    pb = RareEventProblem(growth, [1.0], QuadraticTerminal([0.0]), 0.0, 1e6, [1.0], 3.0, 1e-2, bound=1e6)
    with pytest.raises(ConvergenceError):
        solve_rare_event(pb, relaxation=1.0, min_relaxation=1e-3)


def test_problem_validation():
    with pytest.raises(ValidationError):
        RareEventProblem(DECAY, [1.0], QuadraticTerminal([0.0]), -1.0, 1.0, [0.0], 1.0, 0.1)
    with pytest.raises(ValidationError):
        RareEventProblem(DECAY, [1.0], QuadraticTerminal([0.0]), 0.1, 1.0, [0.0, 1.0], 1.0, 0.1)
    with pytest.raises(ValidationError):
        RareEventProblem(DECAY, [0.5, 0.5], QuadraticTerminal([0.0]), 0.1, 1.0, [0.0], 1.0, 0.1)
