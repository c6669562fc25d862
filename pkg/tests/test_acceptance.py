"""One test per acceptance criterion; each records a PASS/FAIL line shown in the terminal summary."""

import time

import numpy as np
import pytest

from rareflow.action import action, hamiltonian, integrate_hamiltonian, legendre_duality_check
from rareflow.chain import StochasticMatrix, cyclic_walk, stationary_distribution
from rareflow.cli import main
from rareflow.config import ReproduceSection
from rareflow.ensemble import DiscretePath, FunctionEnsemble, LinearDriftEnsemble
from rareflow.experiments import run_reproduce
from rareflow.learn import (LeastSquaresRisk, PolynomialModel, RiskEnsemble, bootstrap_subsample,
                            empirical_risk, holdout_sample, risk_gradient, risk_hessian)
from rareflow.rarepath import (GaussianBump, RareEventProblem, mc_rare_probability,
                               smallest_uncensored, solve_constrained, solve_rare_event)
from rareflow.switching import averaging_deviation, integrate_averaged, simulate_switched

from conftest import THREE_STATE
from test_rarepath import DECAY, OU_VARIANCE, lq_closed_form, lq_problem

TWO_MODE = LinearDriftEnsemble([[[-1.0, 0.0], [0.0, -2.0]], [[-2.0, 1.0], [0.0, -1.0]]],
                               [[1.0, 0.0], [-1.0, 1.0]])
FAIR = StochasticMatrix([[0.3, 0.7], [0.6, 0.4]])


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def warm_kernels():
    """Compile the numba kernels once so runtimes measure the computation, not the JIT."""
    simulate_switched(TWO_MODE, FAIR, 0.1, [0.0, 0.0], 0, 0.1, 0.01, seed=0)
    solve_rare_event(lq_problem(0.1))


def test_criterion_1_stationary_distributions(acceptance):
    cases = {"three-state": (StochasticMatrix(THREE_STATE), np.array([0.25, 0.375, 0.375])),
             "6-cycle": (cyclic_walk(6), np.full(6, 1 / 6))}
    details, ok = [], True
    for name, (P, expected) in cases.items():
        err = float(np.max(np.abs(stationary_distribution(P).weights - expected)))
        best = np.inf
        for _ in range(50):
            t0 = time.perf_counter()
            stationary_distribution(P)
            best = min(best, time.perf_counter() - t0)
        ok &= err <= 1e-10 and best < 1e-3
        details.append(f"{name} err={err:.1e} t={best * 1e3:.3f}ms")
    assert acceptance(1, ok, "; ".join(details))


@pytest.fixture(scope="module")
def reproductions(tmp_path_factory, warm_kernels):
    out = {}
    for part in ("a", "b"):
        folder = tmp_path_factory.mktemp(f"reproduce_{part}")
        t0 = time.perf_counter()
        summary = run_reproduce(part, ReproduceSection(), 0, folder)
        out[part] = (summary, time.perf_counter() - t0)
    return out


def test_criterion_2_regression_reproduction(acceptance, reproductions):
    details, ok = [], True
    for part, (summary, seconds) in reproductions.items():
        dist = summary["curve_distance"]
        ok &= dist <= 0.01 and seconds < 5.0
        details.append(f"part {part} sup-distance={dist:.4f} t={seconds:.2f}s")
    assert acceptance(2, ok, "; ".join(details))


def test_criterion_3_rare_event_constraint(acceptance, water, warm_kernels, reproductions):
    model = PolynomialModel.standardized(2, water.x)
    ensemble = RiskEnsemble.from_subsamples(water, bootstrap_subsample(water, 6, 18, True, 0), model)
    hold = holdout_sample(water, 9, 1)
    pi = stationary_distribution(cyclic_walk(6)).weights
    problem = RareEventProblem(ensemble, pi, LeastSquaresRisk(model, water.x[hold], water.y[hold]), 1e-4, 1.0,
                               np.zeros(3), 10.0, 0.01)
    t0 = time.perf_counter()
    res = solve_constrained(problem)
    seconds = time.perf_counter() - t0
    bundle = reproductions["a"][0]["rare_event"]["terminal_value"]
    ok = res.terminal_value <= 1e-4 and bundle <= 1e-4 and seconds < 30.0
    assert acceptance(3, ok, f"Phi(phi*(T))={res.terminal_value:.4e} (bundle {bundle:.4e}) "
                             f"lam={res.lam:.3g} t={seconds:.2f}s")


def test_criterion_4_averaging(acceptance, warm_kernels):
    t0 = time.perf_counter()
    rows = averaging_deviation(TWO_MODE, FAIR, [1.0, -1.0], 0, 1.0, None, [1e-1, 1e-2, 1e-3], range(30))
    seconds = time.perf_counter() - t0
    med = [r.median_sup_deviation for r in rows]
    ok = med[0] > med[1] > med[2] and seconds < 120.0
    assert acceptance(4, ok, "median sup-deviation " + ", ".join(f"{m:.4f}" for m in med) + f" t={seconds:.1f}s")


def test_criterion_5_ldp_cross_check(acceptance, warm_kernels):
    problem = RareEventProblem(DECAY, [1.0], GaussianBump([0.0], 0.2), 0.02, 1.0, [0.0], 1.0, 0.01)
    guess = DiscretePath.from_function(lambda t: 0.6 * t, 1.0, 0.01)
    t0 = time.perf_counter()
    S = solve_constrained(problem, guess).action.value
    rows = mc_rare_probability(problem, [0.2, 0.1, 0.05], 100_000, 0)
    seconds = time.perf_counter() - t0
    best = smallest_uncensored(rows)
    gap = abs(best.rescaled_log - S) / S
    exact = problem.terminal.escape_radius(problem.zeta) ** 2 / (2 * OU_VARIANCE)
    ok = gap <= 0.25 and seconds < 300.0
    assert acceptance(5, ok, f"eps={best.eps} hits={best.hits} -eps log P={best.rescaled_log:.4f} "
                             f"inf S={S:.4f} (exact {exact:.4f}) gap={gap:.1%} t={seconds:.1f}s")


def test_criterion_6_solver_exactness(acceptance):
    res = solve_rare_event(lq_problem(1e-3))
    phi, psi = lq_closed_form(res.phi.times)
    err = max(np.max(np.abs(res.phi.values[:, 0] - phi)), np.max(np.abs(res.psi.values[:, 0] - psi)))
    free = {dt: solve_rare_event(lq_problem(dt, lam=0.0)) for dt in (1e-2, 1e-3)}
    flow_ok = all(np.max(np.abs(r.phi.values[:, 0] - np.exp(-r.phi.times))) <= 1e-8 and not np.any(r.psi.values)
                  for r in free.values())
    actions = {dt: r.action.value for dt, r in free.items()}
    ok = err <= 1e-4 and flow_ok and all(S <= dt**2 for dt, S in actions.items())
    assert acceptance(6, ok, f"closed-form err={err:.1e}; lam=0 action "
                             + ", ".join(f"{S:.1e}@dt={dt:g}" for dt, S in actions.items()))


def test_criterion_7_numerical_hygiene(acceptance, water):
    gen = np.random.default_rng(2024)
    # derivatives of the empirical risk against central differences
    model = PolynomialModel.standardized(2, water.x)
    h, fd_worst = 1e-6, 0.0
    for _ in range(50):
        idx = gen.choice(water.n, size=gen.integers(3, 23))
        x, y, theta = water.x[idx], water.y[idx], gen.normal(scale=3.0, size=3)
        g, H = risk_gradient(theta, x, y, model), risk_hessian(theta, x, y, model)
        E = np.eye(3) * h
        fd_g = np.array([(empirical_risk(theta + e, x, y, model) - empirical_risk(theta - e, x, y, model)) / (2 * h)
                         for e in E])
        fd_H = np.array([(risk_gradient(theta + e, x, y, model) - risk_gradient(theta - e, x, y, model)) / (2 * h)
                         for e in E])
        fd_worst = max(fd_worst, np.max(np.abs(g - fd_g)) / max(1.0, np.max(np.abs(g))),
                       np.max(np.abs(H - fd_H)) / max(1.0, np.max(np.abs(H))))
    # Legendre duality on random samples
    pts, vel = gen.normal(size=(100, 2)), gen.normal(size=(100, 2))
    gap = legendre_duality_check(TWO_MODE, [0.4, 0.6], pts, vel)
    # energy drift of the Hamiltonian flow under refinement
    pend = FunctionEnsemble(
        [lambda z: np.array([z[1], -np.sin(z[0])]), lambda z: np.array([np.sin(z[1]), -z[0]])],
        [lambda z: np.array([[0.0, 1.0], [-np.cos(z[0]), 0.0]]),
         lambda z: np.array([[0.0, np.cos(z[1])], [-1.0, 0.0]])], dim=2)
    drift = []
    for dt in (1e-2, 5e-3, 2.5e-3):
        phi, psi = integrate_hamiltonian(pend, [0.5, 0.5], [1.0, -0.5], [0.3, 0.8], 5.0, dt)
        H = np.array([hamiltonian(pend, [0.5, 0.5], a, b) for a, b in zip(phi.values, psi.values)])
        drift.append(np.max(np.abs(H - H[0])))
    energy_rates = [drift[0] / drift[1], drift[1] / drift[2]]
    # action of averaged-flow paths
    flow_S = [action(integrate_averaged(TWO_MODE, [0.4, 0.6], [1.0, -1.0], 2.0, dt), TWO_MODE, [0.4, 0.6]).value
              for dt in (0.1, 0.05, 0.025)]
    action_rates = [flow_S[0] / flow_S[1], flow_S[1] / flow_S[2]]
    ok = (fd_worst <= 1e-5 and gap <= 1e-10 and min(energy_rates) >= 12 and min(action_rates) >= 3.5
          and flow_S[2] < flow_S[0])
    assert acceptance(7, ok, f"fd={fd_worst:.1e} duality={gap:.1e} energy ratios="
                             + "/".join(f"{r:.1f}" for r in energy_rates) + " flow action ratios="
                             + "/".join(f"{r:.1f}" for r in action_rates))


def test_criterion_8_determinism(acceptance, tmp_path, warm_kernels):
    from pathlib import Path

    config = str(Path(__file__).resolve().parents[1] / "configs" / "simulate.toml")
    same = {}
    for label, argv in {"simulate": ["simulate", "--config", config], "reproduce a": ["reproduce", "a"],
                        "reproduce b": ["reproduce", "b"]}.items():
        trees = []
        for k in range(2):
            out = tmp_path / f"{label.replace(' ', '_')}_{k}"
            assert main(argv + ["--out", str(out), "--quiet"]) == 0
            trees.append(tree_bytes(out))
        same[label] = trees[0] == trees[1] and len(trees[0]) > 0
    assert acceptance(8, all(same.values()), "; ".join(f"{k} {'identical' if v else 'DIFFERENT'}"
                                                        for k, v in same.items()))
