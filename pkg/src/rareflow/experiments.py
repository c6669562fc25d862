"""Command implementations: build objects from a config, run, write outputs.

Every ``run_*`` function validates all inputs before writing anything and
returns a JSON-ready summary.  Output files are deterministic in
``(config, seed)``.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from . import io, plotting
from .action import hamiltonian_flow_residual
from .chain import (StochasticMatrix, cyclic_walk, ergodicity_diagnostic, parse_matrix_text, read_matrix,
                    stationary_distribution, transitions_to_stationarity)
from .config import (ChainSection, FitSection, LinearEnsembleSection, ReproduceSection, RiskEnsembleSection,
                     RunConfig)
from .ensemble import ConstantWeights, DiscretePath, LinearDriftEnsemble, grid_steps
from .errors import ValidationError
from .learn import (Dataset, LeastSquaresRisk, PolynomialModel, RiskEnsemble, averaged_gradient_flow,
                    bootstrap_subsample, curve_distance, holdout_sample, kelvin_grid, perturbed_gradient_flow,
                    polynomial_curve, saturated_water)
from .rarepath import (GaussianBump, QuadraticTerminal, RareEventProblem, ldp_log_probability,
                       mc_rare_probability, smallest_uncensored, solve_constrained, solve_rare_event)
from .switching import DomainBox, integrate_averaged, simulate_switched

log = logging.getLogger(__name__)

THREE_STATE = [[0.0, 1.0, 0.0], [1 / 3, 0.0, 2 / 3], [1 / 3, 1 / 3, 1 / 3]]

# Steady-state coefficients (alpha_0, alpha_1, alpha_2) used as comparison targets.
REFERENCE_COEFFICIENTS = {
    "a": (5.5430, -8.5994e-3, 1.3549e-5),
    "b": (5.6761, -9.4045e-3, 1.4765e-5),
}

PARTS = {
    "a": {"K": 6, "m": 18, "replacement": True, "eps": 1e-4, "rare_event": True},
    "b": {"K": 3, "m": 7, "replacement": False, "eps": 0.05, "rare_event": False},
}


def build_chain(section: ChainSection) -> StochasticMatrix:
    if section.preset == "cycle6":
        return cyclic_walk(6)
    if section.preset == "three_state":
        return StochasticMatrix(THREE_STATE)
    if section.file is not None:
        return read_matrix(section.file)
    text = "\n".join(" ".join(str(v) for v in row) for row in section.entries)
    return StochasticMatrix(parse_matrix_text(text))


def build_ensemble(cfg: RunConfig, seed: int):
    """Ensemble plus, for risk ensembles, the data, model and subsamples behind it."""
    sec = cfg.ensemble
    if isinstance(sec, LinearEnsembleSection):
        A = np.asarray(sec.A, dtype=float)
        if A.ndim != 3 or A.shape[1] != A.shape[2]:
            raise ValidationError(f"ensemble.A: expected shape (K, p, p), got {A.shape}")
        if sec.c is not None and np.asarray(sec.c).shape != A.shape[:2]:
            raise ValidationError(f"ensemble.c: expected shape {A.shape[:2]}")
        return LinearDriftEnsemble(A, sec.c), {}
    assert isinstance(sec, RiskEnsembleSection)
    data = Dataset.from_csv(sec.data) if sec.data is not None else saturated_water()
    model = PolynomialModel.standardized(sec.degree, data.x)
    subsets = bootstrap_subsample(data, sec.K, sec.m, sec.replacement, seed)
    return RiskEnsemble.from_subsamples(data, subsets, model), {"data": data, "model": model, "subsets": subsets}


def _vector(name: str, values, p: int) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.shape != (p,):
        raise ValidationError(f"{name}: expected {p} entries, got {v.size}")
    return v


def _weights_for(cfg: RunConfig, ensemble) -> tuple[ConstantWeights, StochasticMatrix | None]:
    if cfg.chain is None:
        if ensemble.count != 1:
            raise ValidationError("chain: required when the ensemble has more than one member")
        return ConstantWeights([1.0]), None
    P = build_chain(cfg.chain)
    if P.size != ensemble.count:
        raise ValidationError(f"chain: {P.size} states but the ensemble has {ensemble.count} members")
    return ConstantWeights(stationary_distribution(P).weights), P


def _thin_stride(n: int, rows: int) -> int:
    target = max(1, n // rows)
    for s in range(target, 0, -1):
        if n % s == 0:
            return s
    return 1


def _path_columns(prefix: str, path: DiscretePath) -> dict:
    cols = {"t": path.times}
    for j in range(path.values.shape[1]):
        cols[f"{prefix}_{j + 1}"] = path.values[:, j]
    return cols


def _write_residual(out: Path, res) -> None:
    io.write_columns(out / "residual.csv", {"t": res.times, "r_phi_norm": res.phi_norm, "r_psi_norm": res.psi_norm})


def run_stationary(cfg: RunConfig, seed: int, out: Path) -> dict:
    cfg.require("stationary", "chain")
    P = build_chain(cfg.chain)
    inv = stationary_distribution(P, tol=cfg.stationary.tol)
    start = np.zeros(P.size)
    start[0] = 1.0
    summary = inv.to_dict() | {
        "diagnostic": ergodicity_diagnostic(P),
        "transitions_to_stationarity": transitions_to_stationarity(P, start, cfg.stationary.mixing_tol),
        "mixing_tol": cfg.stationary.mixing_tol,
    }
    io.write_json(out / "stationary.json", summary)
    plotting.chain_graph(P.entries, inv.weights, out / "chain.png")
    return summary


def run_simulate(cfg: RunConfig, seed: int, out: Path) -> dict:
    cfg.require("simulate", "chain", "ensemble", "simulate")
    sim = cfg.simulate
    ensemble, _ = build_ensemble(cfg, seed)
    P = build_chain(cfg.chain)
    if P.size != ensemble.count:
        raise ValidationError(f"chain: {P.size} states but the ensemble has {ensemble.count} members")
    if sim.k0 > ensemble.count:
        raise ValidationError(f"simulate.k0: must lie in 1..{ensemble.count}")
    x0 = _vector("simulate.x0", sim.x0, ensemble.dim)
    n = grid_steps(sim.T, sim.dt)
    if n % sim.stride:
        raise ValidationError(f"simulate.stride: must divide the {n} steps")
    domain = None
    if cfg.domain is not None:
        domain = DomainBox(_vector("domain.lower", cfg.domain.lower, ensemble.dim),
                           _vector("domain.upper", cfg.domain.upper, ensemble.dim), cfg.domain.margin)
    traj = simulate_switched(ensemble, P, sim.eps, x0, sim.k0 - 1, sim.T, sim.dt, seed, noise=sim.noise,
                             switching=sim.switching, domain=domain, stride=sim.stride)
    ref = integrate_averaged(ensemble, stationary_distribution(P).weights, x0, sim.T, sim.dt)
    io.write_trajectory(out / "trajectory.csv", traj.times, traj.states, traj.modes)
    io.write_json(out / "jumps.json", {"jump_times": traj.jump_times, "from_mode": traj.jump_from + 1,
                                       "to_mode": traj.jump_to + 1, "n_jumps": traj.n_jumps})
    rows = len(traj.states)
    ref_vals = ref.values[::sim.stride][:rows]
    summary = {"n_jumps": traj.n_jumps, "exit_time": traj.exit_time, "terminal": traj.terminal,
               "occupancy": traj.occupancy(ensemble.count),
               "sup_deviation_from_averaged": float(np.max(np.linalg.norm(traj.states - ref_vals, axis=1))),
               "truncated": traj.exit_time is not None}
    io.write_json(out / "summary.json", summary)
    plotting.trajectories({"switched": (traj.times, traj.states), "averaged": (traj.times, ref_vals)},
                          out / "trajectory.png")
    return summary


def run_fit(cfg: RunConfig, seed: int, out: Path) -> dict:
    cfg.require("fit", "ensemble")
    if not isinstance(cfg.ensemble, RiskEnsembleSection):
        raise ValidationError("ensemble.kind: fit needs a risk ensemble")
    fit = cfg.fit or FitSection()
    ensemble, parts = build_ensemble(cfg, seed)
    if cfg.chain is not None:
        weights, _ = _weights_for(cfg, ensemble)
    else:
        weights = ConstantWeights(np.full(ensemble.count, 1 / ensemble.count))
    model, data = parts["model"], parts["data"]
    theta0 = np.zeros(ensemble.dim) if fit.theta0 is None else _vector("fit.theta0", fit.theta0, ensemble.dim)
    flow = averaged_gradient_flow(ensemble, weights, theta0, fit.T, fit.dt, tol=fit.gradient_tol)
    alpha = model.to_original(flow.steady_state)
    grid = np.linspace(data.x.min(), data.x.max(), 201)
    io.write_columns(out / "curve.csv", {"x": grid, "fitted": polynomial_curve(alpha, grid)})
    summary = {"theta_normalized": flow.steady_state, "alpha": alpha, "pi": weights(),
               "normal_equations_solution": model.to_original(ensemble.weighted_solution(weights())),
               "flow": flow.to_dict(), "subsamples": parts["subsets"].to_dict(),
               "normalization": {"center": model.center, "scale": model.scale}}
    io.write_json(out / "fit.json", summary)
    plotting.fitted_curves(data.x, data.y, grid, {"fitted": polynomial_curve(alpha, grid)}, out / "fit.png",
                           xlabel="x", ylabel="y")
    return summary


def _build_problem(cfg: RunConfig, seed: int):
    cfg.require("rarepath", "ensemble", "terminal", "rarepath")
    rp, term = cfg.rarepath, cfg.terminal
    ensemble, _ = build_ensemble(cfg, seed)
    weights, P = _weights_for(cfg, ensemble)
    p = ensemble.dim
    center = _vector("terminal.center", term.center, p)
    if term.kind == "bump":
        terminal = GaussianBump(center, term.width)
    else:
        W = None if term.weight is None else np.asarray(term.weight, dtype=float)
        if W is not None and W.shape != (p, p):
            raise ValidationError(f"terminal.weight: expected shape ({p}, {p})")
        terminal = QuadraticTerminal(center, W)
    x0 = _vector("rarepath.x0", rp.x0, p)
    problem = RareEventProblem(ensemble, weights, terminal, rp.zeta, rp.lam, x0, rp.T, rp.dt, chain=P)
    guess = None
    if rp.guess_endpoint is not None:
        end = _vector("rarepath.guess_endpoint", rp.guess_endpoint, p)
        s = np.linspace(0.0, 1.0, problem.n_steps + 1)[:, None]
        guess = DiscretePath(x0 + s * (end - x0), rp.dt)
    return problem, guess


def _solve(cfg: RunConfig, problem, guess):
    rp = cfg.rarepath
    kw = {"tol": rp.tol, "max_iter": rp.max_iter, "relaxation": rp.relaxation}
    if rp.constrained:
        return solve_constrained(problem, guess, **kw)
    return solve_rare_event(problem, guess, **kw)


def run_rarepath(cfg: RunConfig, seed: int, out: Path) -> dict:
    problem, guess = _build_problem(cfg, seed)
    res = _solve(cfg, problem, guess)
    eps_grid = cfg.ldp.eps if cfg.ldp is not None else [0.2, 0.1, 0.05]
    resid = hamiltonian_flow_residual(res.phi, res.psi, problem.ensemble, problem.weights)
    summary = res.summary() | {
        "exponents": [ldp_log_probability(res.action, e).to_dict() for e in eps_grid],
        "constraint_met": res.terminal_value <= problem.zeta, "zeta": problem.zeta,
        "max_residual": {"phi": float(resid.phi_norm.max()), "psi": float(resid.psi_norm.max())},
    }
    io.write_json(out / "rarepath.json", summary)
    io.write_columns(out / "phi.csv", _path_columns("phi", res.phi))
    io.write_columns(out / "psi.csv", _path_columns("psi", res.psi))
    _write_residual(out, resid)
    plotting.trajectories({"most likely path": (res.phi.times, res.phi.values),
                           "conjugate moment": (res.psi.times, res.psi.values)}, out / "rarepath.png")
    return summary


def run_ldp(cfg: RunConfig, seed: int, out: Path) -> dict:
    cfg.require("ldp", "ldp")
    problem, guess = _build_problem(cfg, seed)
    res = _solve(cfg, problem, guess)
    rows = mc_rare_probability(problem, cfg.ldp.eps, cfg.ldp.trials, seed)
    S = res.action.value
    table = [r.to_dict() | {"ldp_exponent": ldp_log_probability(res.action, r.eps).exponent} for r in rows]
    best = smallest_uncensored(rows)
    summary = {"action": res.action.to_dict(), "terminal_value": res.terminal_value, "lam": res.lam,
               "table": table, "smallest_uncensored_eps": best.eps,
               "relative_gap": abs(best.rescaled_log - S) / S if S > 0 else None,
               "caveat": "log-asymptotic only"}
    io.write_json(out / "ldp.json", summary)
    io.write_csv(out / "ldp.csv", ["eps", "trials", "hits", "probability", "stderr", "censored", "rescaled_log",
                                   "ldp_exponent"],
                 [[r["eps"], r["trials"], r["hits"], r["probability"], r["stderr"], int(r["censored"]),
                   "" if r["rescaled_log"] is None else r["rescaled_log"], r["ldp_exponent"]] for r in table])
    live = [r for r in rows if not r.censored]
    plotting.ldp_table([r.eps for r in live], [r.rescaled_log for r in live], S, out / "ldp.png")
    return summary


def run_reproduce(part: str, settings: ReproduceSection, seed: int, out: Path) -> dict:
    """Rebuild one experiment: chain, bootstrap fit, perturbed flow and (part a) the rare-event solve."""
    if part not in PARTS:
        raise ValidationError(f"part: expected 'a' or 'b', got {part!r}")
    setup = PARTS[part]
    eps = settings.eps if settings.eps is not None else setup["eps"]
    n_pert = grid_steps(settings.perturbed_T, eps / 10)
    grid_steps(settings.flow_T, settings.flow_dt)
    if setup["rare_event"]:
        grid_steps(settings.rare_T, settings.rare_dt)

    data = saturated_water()
    model = PolynomialModel.standardized(2, data.x)
    P = cyclic_walk(6) if part == "a" else StochasticMatrix(THREE_STATE)
    inv = stationary_distribution(P)
    start = np.zeros(P.size)
    start[0] = 1.0
    mixing = transitions_to_stationarity(P, start, 1e-3)
    subsets = bootstrap_subsample(data, setup["K"], setup["m"], setup["replacement"], seed)
    ensemble = RiskEnsemble.from_subsamples(data, subsets, model)
    theta0 = np.zeros(3)
    flow = averaged_gradient_flow(ensemble, inv.weights, theta0, settings.flow_T, settings.flow_dt)
    alpha = model.to_original(flow.steady_state)
    ref = np.array(REFERENCE_COEFFICIENTS[part])
    grid = kelvin_grid()

    stride = _thin_stride(n_pert, 3000)
    traj = perturbed_gradient_flow(ensemble, P, eps, theta0, 0, settings.perturbed_T, eps / 10, seed,
                                   stride=stride)
    curves = {"T_K": grid, "fitted": polynomial_curve(alpha, grid), "reference": polynomial_curve(ref, grid),
              "perturbed_terminal": polynomial_curve(model.to_original(traj.terminal), grid)}
    summary = {
        "part": part, "seed": seed, "pi": inv.weights, "stationary_residual": inv.residual,
        "transitions_to_stationarity": mixing, "inverse_eps": 1 / eps,
        "mixing_within_inverse_eps": mixing <= 1 / eps,
        "subsamples": subsets.to_dict(), "normalization": {"center": model.center, "scale": model.scale},
        "averaged_flow": flow.to_dict() | {"alpha": alpha},
        "reference_alpha": ref, "curve_distance": curve_distance(alpha, ref, grid),
        "perturbed_flow": {"eps": eps, "T": settings.perturbed_T, "dt": eps / 10, "stride": stride,
                           "terminal_normalized": traj.terminal, "terminal_alpha": model.to_original(traj.terminal),
                           "occupancy": traj.occupancy(P.size), "n_jumps": traj.n_jumps,
                           "distance_to_steady_state": float(np.linalg.norm(traj.terminal - flow.steady_state))},
    }
    tables = {
        "data.csv": "bundled dataset",
        "curves.csv": "fitted, reference and perturbed-terminal curves on a 1 K grid",
        "averaged_flow.csv": "averaged gradient flow in normalized coordinates",
        "perturbed_flow.csv": "switched noisy gradient flow (thinned), modes numbered from 1",
    }
    figures = {"chain.png": "switching chain with stationary weights",
               "fit.png": "data with fitted curves", "flows.png": "averaged and perturbed flows"}

    if setup["rare_event"]:
        hold = holdout_sample(data, settings.holdout_size, seed + 1)
        test_risk = LeastSquaresRisk(model, data.x[hold], data.y[hold])
        problem = RareEventProblem(ensemble, inv.weights, test_risk, settings.zeta, 1.0, theta0,
                                   settings.rare_T, settings.rare_dt)
        res = solve_constrained(problem)
        resid = hamiltonian_flow_residual(res.phi, res.psi, ensemble, inv.weights)
        summary["rare_event"] = res.summary() | {
            "zeta": settings.zeta, "constraint_met": res.terminal_value <= settings.zeta,
            "holdout_indices": hold, "terminal_alpha": model.to_original(res.terminal_point),
            "test_risk_at_steady_state": test_risk(flow.steady_state),
            "max_residual": {"phi": float(resid.phi_norm.max()), "psi": float(resid.psi_norm.max())}}
        curves["rare_event_terminal"] = polynomial_curve(model.to_original(res.terminal_point), grid)
        io.write_columns(out / "rare_path.csv", _path_columns("phi", res.phi))
        io.write_columns(out / "rare_psi.csv", _path_columns("psi", res.psi))
        _write_residual(out, resid)
        tables |= {"rare_path.csv": "most likely path to the holdout-risk event (normalized coordinates)",
                   "rare_psi.csv": "conjugate moment along that path",
                   "residual.csv": "Hamiltonian-system residual norms along the path"}

    data.to_csv(out / "data.csv")
    io.write_columns(out / "curves.csv", curves)
    io.write_columns(out / "averaged_flow.csv", _path_columns("theta", flow.path))
    io.write_trajectory(out / "perturbed_flow.csv", traj.times, traj.states, traj.modes)
    io.write_json(out / "summary.json", summary)
    io.write_json(out / "index.json", {"tables": tables, "figures": figures})

    plotting.chain_graph(P.entries, inv.weights, out / "chain.png")
    shown = {"fitted": curves["fitted"], "reference": curves["reference"]}
    if "rare_event_terminal" in curves:
        shown["rare-event terminal"] = curves["rare_event_terminal"]
    plotting.fitted_curves(data.x, data.y, grid, shown, out / "fit.png")
    flow_t = flow.path.times
    keep = flow_t <= settings.perturbed_T + 1e-12
    plotting.trajectories({"averaged": (flow_t[keep], flow.path.values[keep]),
                           "perturbed": (traj.times, traj.states)}, out / "flows.png", ylabel="theta")
    return summary
