"""Most likely paths to a terminal rare event, and Monte Carlo checks.

The event is ``Phi(X_T) <= zeta``.  Penalising the terminal value with
weight ``lam`` turns the constrained minimum-action problem into a
Hamiltonian system with decoupled boundary conditions::

    phi' = b(phi) + psi,            phi(0) = x0
    psi' = -Db(phi)^T psi,          psi(T) = -lam * grad Phi(phi(T))

:func:`solve_rare_event` alternates a backward sweep for ``psi`` along the
current path and a forward sweep for a new path until the path stops
changing.  :func:`solve_constrained` tunes ``lam`` so that the terminal
constraint is met with little slack.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Protocol, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from ._kernels import rk4_affine
from .action import ActionValue, action
from .chain import StochasticMatrix
from .ensemble import DiscretePath, DriftEnsemble, as_weights, averaged_field, grid_steps
from .errors import CensoredError, ConvergenceError, PreconditionError, ValidationError
from .switching import SwitchedRunner, integrate_averaged

log = logging.getLogger(__name__)

MAX_GROWTH = 2.0  # sweep-change growth factor that triggers a rejected step


class TerminalFunctional(Protocol):
    def __call__(self, x: np.ndarray) -> float: ...

    def gradient(self, x: np.ndarray) -> np.ndarray: ...


class QuadraticTerminal:
    """``0.5 * (x - a)^T W (x - a)``."""

    def __init__(self, target, weight=None):
        self.target = np.atleast_1d(np.asarray(target, dtype=float))
        p = self.target.size
        self.weight = np.eye(p) if weight is None else np.asarray(weight, dtype=float).reshape(p, p)

    def __call__(self, x) -> float:
        d = np.asarray(x, dtype=float) - self.target
        return 0.5 * float(d @ self.weight @ d)

    def gradient(self, x) -> np.ndarray:
        return self.weight @ (np.asarray(x, dtype=float) - self.target)


class GaussianBump:
    """``exp(-|x - c|^2 / (2 w^2))``: small only far from ``c``.

    ``{Phi <= zeta}`` is the outside of the ball of radius
    ``w * sqrt(2 log(1/zeta))``, i.e. an escape event.
    """

    def __init__(self, center, width: float):
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        self.width = float(width)

    def __call__(self, x) -> float:
        d = np.asarray(x, dtype=float) - self.center
        return float(np.exp(-(d @ d) / (2 * self.width**2)))

    def gradient(self, x) -> np.ndarray:
        d = np.asarray(x, dtype=float) - self.center
        return -d / self.width**2 * self(x)

    def escape_radius(self, zeta: float) -> float:
        return self.width * float(np.sqrt(2 * np.log(1 / zeta)))


def check_terminal_gradient(terminal: TerminalFunctional, points, h: float = 1e-6) -> float:
    """Largest relative gap between ``terminal.gradient`` and central differences."""
    worst = 0.0
    for x in np.atleast_2d(np.asarray(points, dtype=float)):
        g = terminal.gradient(x)
        fd = np.empty_like(g)
        for i in range(x.size):
            e = np.zeros_like(x)
            e[i] = h * max(1.0, abs(x[i]))
            fd[i] = (terminal(x + e) - terminal(x - e)) / (2 * e[i])
        worst = max(worst, float(np.max(np.abs(g - fd)) / max(1e-8, float(np.max(np.abs(g))))))
    return worst


@dataclass
class RareEventProblem:
    ensemble: DriftEnsemble
    weights: object
    terminal: TerminalFunctional
    zeta: float
    lam: float
    x0: np.ndarray
    T: float
    dt: float
    chain: StochasticMatrix | None = None
    k0: int = 0
    bound: float | None = None

    def __post_init__(self):
        if self.zeta < 0 or self.lam < 0:
            raise ValidationError("zeta and lam must be non-negative")
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if self.x0.size != self.ensemble.dim:
            raise ValidationError(f"x0 has {self.x0.size} entries, ensemble dimension is {self.ensemble.dim}")
        self.n_steps = grid_steps(self.T, self.dt)
        self.weights = as_weights(self.weights)
        if self.weights.count != self.ensemble.count:
            raise ValidationError("weights and ensemble disagree on K")


@dataclass
class OptimalPathResult:
    phi: DiscretePath
    psi: DiscretePath
    action: ActionValue
    iterations: int
    update_norm: float
    terminal_value: float
    lam: float
    relaxation: float
    history: list[float] = field(default_factory=list)

    @property
    def terminal_point(self) -> np.ndarray:
        return self.phi.values[-1]

    def summary(self) -> dict:
        return {"action": self.action.to_dict(), "iterations": self.iterations,
                "update_norm": self.update_norm, "terminal_value": self.terminal_value,
                "terminal_point": [float(v) for v in self.terminal_point], "lam": self.lam,
                "relaxation": self.relaxation}


class _Sweeper:
    def __init__(self, problem: RareEventProblem, compiled: bool = True):
        self.pb = problem
        self.b, self.Db = averaged_field(problem.ensemble, problem.weights)
        self.n = problem.n_steps
        self.t = np.arange(self.n + 1) * problem.dt
        coeffs = problem.ensemble.linear_coefficients()
        self.constant_jac = compiled and coeffs is not None and problem.weights.is_constant
        if self.constant_jac:
            pi = problem.weights()
            self.Abar = np.ascontiguousarray(np.einsum("k,kij->ij", pi, coeffs[0]))
            self.cbar = pi @ coeffs[1]

    def _midpoints(self, values: np.ndarray) -> np.ndarray:
        return CubicSpline(self.t, values, axis=0)(self.t[:-1] + self.pb.dt / 2)

    def backward(self, phi: np.ndarray, lam: float) -> np.ndarray:
        dt, n = self.pb.dt, self.n
        psi = np.empty_like(phi)
        psi[n] = -lam * self.pb.terminal.gradient(phi[n])
        if lam == 0:
            psi[:] = 0.0
            return psi
        if self.constant_jac:
            zeros = np.zeros((n + 1, phi.shape[1]))
            return rk4_affine(np.ascontiguousarray(-self.Abar.T), psi[n], zeros, zeros[:n], -dt)[::-1].copy()
        mid = self._midpoints(phi)
        nodes = [self.Db(x).T for x in phi]
        mids = [self.Db(x).T for x in mid]
        y = psi[n]
        for i in range(n - 1, -1, -1):
            A1, Am, A0 = nodes[i + 1], mids[i], nodes[i]
            k1 = -A1 @ y
            k2 = -Am @ (y - dt / 2 * k1)
            k3 = -Am @ (y - dt / 2 * k2)
            k4 = -A0 @ (y - dt * k3)
            y = y - dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            psi[i] = y
        return psi

    def forward(self, psi: np.ndarray) -> np.ndarray:
        dt, b = self.pb.dt, self.b
        mid = self._midpoints(psi) if np.any(psi) else np.zeros((self.n, psi.shape[1]))
        if self.constant_jac:
            return rk4_affine(self.Abar, self.pb.x0, psi + self.cbar, mid + self.cbar, dt)
        out = np.empty_like(psi)
        x = self.pb.x0.copy()
        out[0] = x
        for i in range(self.n):
            k1 = b(x) + psi[i]
            k2 = b(x + dt / 2 * k1) + mid[i]
            k3 = b(x + dt / 2 * k2) + mid[i]
            k4 = b(x + dt * k3) + psi[i + 1]
            x = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            out[i + 1] = x
        return out


def _bound(problem: RareEventProblem, phi0: np.ndarray) -> float:
    if problem.bound is not None:
        return problem.bound
    return 1e3 * (1.0 + float(np.max(np.abs(phi0))))


def solve_rare_event(problem: RareEventProblem, initial_guess: DiscretePath | None = None,
                     tol: float = 1e-8, max_iter: int = 2000, relaxation: float = 0.5,
                     min_relaxation: float = 1e-6, engine: str = "auto") -> OptimalPathResult:
    """Backward/forward sweeps for the penalised most-likely path.

    Each iteration computes ``psi`` backward along the current path, then a
    new path forward under ``b + psi``.  The convergence test is the sup over
    nodes of the Euclidean change produced by one sweep.  Accepted iterates
    move a fraction ``relaxation`` toward the sweep output.  When the change
    more than doubles, the step is rejected and ``relaxation`` is halved; it
    is also halved when successive sweep corrections reverse direction
    without shrinking by half (a slowly oscillating iteration).

    The default initial guess is the unperturbed averaged flow from ``x0``.
    ``engine="python"`` forces the generic sweeps; ``"auto"`` uses compiled
    sweeps for affine drifts with fixed weights.
    """
    if engine not in ("auto", "python"):
        raise ValidationError(f"unknown engine {engine!r}")
    if not 0 < relaxation <= 1:
        raise ValidationError("relaxation must lie in (0, 1]")
    pb = problem
    if initial_guess is None:
        phi = integrate_averaged(pb.ensemble, pb.weights, pb.x0, pb.T, pb.dt).values
    else:
        if len(initial_guess) != pb.n_steps + 1 or abs(initial_guess.dt - pb.dt) > 1e-12 * pb.dt:
            raise ValidationError("initial guess grid does not match the problem grid")
        phi = initial_guess.values.copy()
        if not np.allclose(phi[0], pb.x0, rtol=0, atol=1e-12):
            raise PreconditionError("initial guess must start at x0")
    sweeper = _Sweeper(pb, compiled=engine == "auto")
    bound = _bound(pb, phi)
    omega = relaxation
    history: list[float] = []
    prev = np.inf
    prev_step = None
    for it in range(1, max_iter + 1):
        psi = sweeper.backward(phi, pb.lam)
        new = sweeper.forward(psi)
        if not np.all(np.isfinite(new)) or np.max(np.abs(new)) > bound:
            change = np.inf
        else:
            change = float(np.max(np.linalg.norm(new - phi, axis=1)))
        if change <= tol:
            history.append(change)
            return _result(pb, new, psi, it, change, omega, history)
        # Moderate growth is tolerated: the sup-norm change need not fall monotonically
        # on nonlinear problems, and oscillation is damped separately below.
        if change > MAX_GROWTH * prev or (change == np.inf and prev_step is None):
            omega /= 2
            if prev_step is None or omega < min_relaxation:
                raise ConvergenceError(
                    f"sweeps diverge (change {change:.3e}); reduce relaxation or lam",
                    residual=prev if np.isfinite(prev) else None, iterations=it)
            phi = phi_prev + omega * prev_step
            continue
        step = new - phi
        if prev_step is not None and change > 0.5 * prev:
            cos = float(np.sum(step * prev_step)) / (np.linalg.norm(step) * np.linalg.norm(prev_step))
            if cos < -0.5:
                omega /= 2
        prev, phi_prev, prev_step = change, phi, step
        history.append(change)
        phi = phi + omega * step
    raise ConvergenceError(f"no convergence in {max_iter} iterations (last change {prev:.3e})",
                           residual=prev, iterations=max_iter)


def _result(pb, phi, psi, it, change, omega, history) -> OptimalPathResult:
    path = DiscretePath(phi, pb.dt)
    return OptimalPathResult(path, DiscretePath(psi, pb.dt), action(path, pb.ensemble, pb.weights), it,
                             change, float(pb.terminal(phi[-1])), pb.lam, omega, history)


def solve_constrained(problem: RareEventProblem, initial_guess: DiscretePath | None = None,
                      growth: float = 4.0, rtol: float = 1e-3, max_solves: int = 80,
                      **solver_kwargs) -> OptimalPathResult:
    """Adjust ``lam`` until ``Phi(phi(T))`` sits just below ``zeta``.

    Starting from ``problem.lam`` (or 1 if zero), ``lam`` is scaled by
    ``growth`` to bracket the constraint and then refined by regula falsi in
    log-log coordinates
    until ``zeta * (1 - rtol) <= Phi(phi(T)) <= zeta``.  The returned result
    always satisfies the constraint.  If the unpenalised flow already
    satisfies it, that flow is returned with ``lam = 0``.
    """
    zeta = problem.zeta
    if zeta <= 0:
        raise ValidationError("the lam search needs zeta > 0")
    free = solve_rare_event(replace(problem, lam=0.0), initial_guess, **solver_kwargs)
    if free.terminal_value <= zeta:
        return free
    solves = 1
    guess = initial_guess
    cache: dict[float, OptimalPathResult] = {}

    def run(lam: float) -> OptimalPathResult:
        nonlocal solves, guess
        solves += 1
        if solves > max_solves:
            raise ConvergenceError(f"lam search exceeded {max_solves} solves")
        res = solve_rare_event(replace(problem, lam=lam), guess, **solver_kwargs)
        guess = res.phi
        cache[lam] = res
        log.debug("lam=%g Phi(T)=%g S=%g", lam, res.terminal_value, res.action.value)
        return res

    lam = problem.lam if problem.lam > 0 else 1.0
    res = run(lam)
    if res.terminal_value > zeta:
        lo = lam
        while res.terminal_value > zeta:
            lo, lam = lam, lam * growth
            res = run(lam)
        hi = lam
    else:
        hi = lam
        lo = lam / growth
        while run(lo).terminal_value <= zeta:
            hi, lo = lo, lo / growth
            if lo < 1e-14:
                return cache[hi]
    best = cache[hi]
    # Illinois regula falsi on log Phi(T) against log lam, target inside the window.
    target = np.log(zeta * (1 - rtol / 2))
    a, fa = np.log(lo), np.log(cache[lo].terminal_value) - target
    b, fb = np.log(hi), np.log(cache[hi].terminal_value) - target
    side = 0
    while best.terminal_value < zeta * (1 - rtol) and b - a > 1e-9:
        c = (a * fb - b * fa) / (fb - fa)
        if not a < c < b:
            c = 0.5 * (a + b)
        res = run(float(np.exp(c)))
        fc = np.log(res.terminal_value) - target
        if res.terminal_value <= zeta:
            b, fb, best = c, fc, res
            if side == 1:
                fa /= 2
            side = 1
        else:
            a, fa = c, fc
            if side == -1:
                fb /= 2
            side = -1
    return best


@dataclass(frozen=True)
class LDPEstimate:
    exponent: float
    eps: float
    action: float
    caveat: str = "log-asymptotic only"

    def to_dict(self) -> dict:
        return {"eps": self.eps, "action": self.action, "log_probability": self.exponent,
                "caveat": self.caveat}


def ldp_log_probability(S_min: ActionValue | float, eps: float) -> LDPEstimate:
    """Leading-order ``log P ~ -S/eps``; prefactors are not resolved."""
    S = S_min.value if isinstance(S_min, ActionValue) else float(S_min)
    if eps <= 0:
        raise ValidationError("eps must be positive")
    return LDPEstimate(-S / eps, float(eps), S)


@dataclass(frozen=True)
class MCRow:
    eps: float
    trials: int
    hits: int
    dt: float

    @property
    def probability(self) -> float:
        return self.hits / self.trials

    @property
    def stderr(self) -> float:
        p = self.probability
        return float(np.sqrt(max(p * (1 - p), 0.0) / self.trials))

    @property
    def censored(self) -> bool:
        return self.hits == 0

    @property
    def rescaled_log(self) -> float | None:
        """``-eps log P_hat``, or ``None`` when no trial hit the event."""
        if self.censored:
            return None
        return float(-self.eps * np.log(self.probability)) + 0.0

    def to_dict(self) -> dict:
        return {"eps": self.eps, "trials": self.trials, "hits": self.hits, "dt": self.dt,
                "probability": self.probability, "stderr": self.stderr, "censored": self.censored,
                "rescaled_log": self.rescaled_log}


def _sim_dt(T: float, dt: float, eps: float, switching: bool) -> float:
    if not switching or dt <= eps / 10:
        return dt
    n = int(np.ceil(T / (eps / 10)))
    return T / n


def mc_rare_probability(problem: RareEventProblem, eps_list: Sequence[float], trials: int, seed: int,
                        min_trials: int = 10_000) -> list[MCRow]:
    """Plain Monte Carlo frequency of ``Phi(X_T) <= zeta`` for each noise level.

    Trial ``j`` uses stream ``j`` of ``seed``.  Cells with no hits are marked
    censored; if every cell is censored a :class:`CensoredError` is raised.
    """
    if trials < min_trials:
        raise PreconditionError(f"need at least {min_trials} trials, got {trials}")
    pb = problem
    K = pb.ensemble.count
    chain = pb.chain
    if chain is None:
        if K != 1:
            raise ValidationError("a switching chain is required when K > 1")
        chain = StochasticMatrix([[1.0]])
    rows = []
    for eps in eps_list:
        dt = _sim_dt(pb.T, pb.dt, eps, K > 1)
        runner = SwitchedRunner(pb.ensemble, chain, eps, pb.x0, pb.k0, pb.T, dt, switching=K > 1)
        hits = 0
        for j in range(trials):
            xT = runner.run(seed, stream=j, stride=runner.n).terminal
            hits += pb.terminal(xT) <= pb.zeta
        rows.append(MCRow(float(eps), int(trials), int(hits), float(dt)))
    if all(r.censored for r in rows):
        raise CensoredError("no trial reached the event at any eps; use larger eps or zeta")
    return rows


def smallest_uncensored(rows: Sequence[MCRow]) -> MCRow:
    live = [r for r in rows if not r.censored]
    if not live:
        raise CensoredError("all cells censored")
    return min(live, key=lambda r: r.eps)
