"""Switched diffusions and their averaged limit.

The state follows ``dX = f_nu(X) dt + sqrt(eps) dW`` while the mode ``nu``
is driven by a uniformised chain: an exponential clock of rate ``1/eps``
rings, and at each ring the next mode is drawn from row ``nu`` of
``P(X)`` (self-transitions included).  Every ring is recorded as a jump.

Random numbers come from Philox streams keyed by ``(seed, stream)``; the
noise and the switching clock use separate child streams, so a trajectory
depends only on its own key.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._kernels import em_affine_chunk
from .chain import StochasticMatrix
from .ensemble import (ChainWeights, DiscretePath, DriftEnsemble, as_weights, averaged_drift,
                       averaged_field, grid_steps, rk4_path)
from .errors import PreconditionError, ValidationError

log = logging.getLogger(__name__)

CHUNK = 1 << 16


@dataclass(frozen=True)
class DomainBox:
    """Axis-aligned monitoring box; exits beyond ``margin`` stop the run."""

    lower: np.ndarray
    upper: np.ndarray
    margin: float = 0.0

    def bounds(self, p: int) -> tuple[np.ndarray, np.ndarray]:
        lo = np.broadcast_to(np.asarray(self.lower, dtype=float), (p,)) - self.margin
        hi = np.broadcast_to(np.asarray(self.upper, dtype=float), (p,)) + self.margin
        return np.ascontiguousarray(lo), np.ascontiguousarray(hi)


@dataclass
class SwitchedTrajectory:
    """Recorded run; states and modes are stored every ``stride`` steps.

    Modes are 0-based indices.  ``jump_times`` lists every ring of the
    switching clock, with the modes before and after it.
    """

    dt: float
    stride: int
    states: np.ndarray
    modes: np.ndarray
    jump_times: np.ndarray
    jump_from: np.ndarray
    jump_to: np.ndarray
    seed: int
    stream: int = 0
    exit_time: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.states.shape[0]) * self.dt * self.stride

    @property
    def n_jumps(self) -> int:
        return int(self.jump_times.size)

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]

    def occupancy(self, K: int) -> np.ndarray:
        """Fraction of [0, T] spent in each mode, from the exact jump record."""
        T = self.times[-1]
        t = np.concatenate([[0.0], self.jump_times, [T]])
        m = np.concatenate([[self.modes[0]], self.jump_to])
        return np.bincount(m, weights=np.diff(t), minlength=K) / T


def streams(seed: int, stream: int = 0) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (noise, switching) generators for one trajectory."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream),))
    noise_ss, jump_ss = ss.spawn(2)
    return np.random.Generator(np.random.Philox(noise_ss)), np.random.Generator(np.random.Philox(jump_ss))


def _clock(gen: np.random.Generator, eps: float, T: float) -> tuple[np.ndarray, np.ndarray]:
    block = max(16, int(1.2 * T / eps) + 16)
    times = np.empty(0)
    last = 0.0
    while last <= T:
        more = last + np.cumsum(gen.exponential(eps, size=block))
        times = np.concatenate([times, more])
        last = times[-1]
    times = times[times <= T]
    return times, gen.random(times.size)


def integrate_averaged(ensemble: DriftEnsemble, weights, x0, T: float, dt: float) -> DiscretePath:
    """RK4 solution of ``x' = sum_k pi_k(x) f_k(x)`` on the grid ``0, dt, ..., T``."""
    w = as_weights(weights)
    if w.count != ensemble.count:
        raise ValidationError(f"{w.count} weights for {ensemble.count} drifts")
    b, _ = averaged_field(ensemble, w)
    return rk4_path(lambda t, x: b(x), x0, T, dt)


def _em_chunk_python(x, mode, i0, noise, ensemble, weights, matrix, dt, scale, ev_t, ev_u, ptr,
                     switching, lo, hi, stride, X_out, M_out, jump_from, jump_to):
    for s in range(noise.shape[0]):
        i = i0 + s
        if switching:
            drift = ensemble.drifts(x)[mode]
        else:
            drift = averaged_drift(ensemble, weights, x)
        P = matrix.at(x) if switching and ptr < ev_t.size and ev_t[ptr] <= (i + 1) * dt else None
        x = x + drift * dt + scale * noise[s]
        while ptr < ev_t.size and ev_t[ptr] <= (i + 1) * dt:
            cum = np.cumsum(P[mode])
            new = min(int(np.searchsorted(cum, ev_u[ptr] * cum[-1], side="right")), cum.size - 1)
            jump_from[ptr], jump_to[ptr] = mode, new
            mode = new
            ptr += 1
        if (i + 1) % stride == 0:
            X_out[(i + 1) // stride] = x
            M_out[(i + 1) // stride] = mode
        if np.any(x < lo) or np.any(x > hi):
            return x, mode, ptr, i + 1
    return x, mode, ptr, -1


class SwitchedRunner:
    """Validated simulation setup, reusable across seeds and streams."""

    def __init__(self, ensemble: DriftEnsemble, P: StochasticMatrix, eps: float, x0, k0: int,
                 T: float, dt: float, *, noise: bool = True, switching: bool = True,
                 domain: DomainBox | None = None, engine: str = "auto"):
        self.n = grid_steps(T, dt)
        K, p = ensemble.count, ensemble.dim
        if not isinstance(P, StochasticMatrix):
            P = StochasticMatrix(P)
        if P.size != K:
            raise ValidationError(f"chain has {P.size} states but ensemble has {K} drifts")
        if not 0 <= k0 < K:
            raise ValidationError(f"initial mode {k0} outside 0..{K - 1}")
        self.ensemble, self.P, self.eps, self.k0, self.T, self.dt = ensemble, P, eps, int(k0), T, dt
        self.x0 = np.array(x0, dtype=float).reshape(p)
        self.noise, self.switching = noise, switching
        self.deterministic = not noise and not switching
        if not self.deterministic:
            if eps <= 0:
                raise PreconditionError("eps must be positive when noise or switching is on")
            if switching and dt > eps / 10 * (1 + 1e-12):
                raise PreconditionError(f"dt={dt:g} too coarse for eps={eps:g}; need dt <= eps/10")
        self.weights = ChainWeights(P)
        self.lo, self.hi = domain.bounds(p) if domain else (np.full(p, -np.inf), np.full(p, np.inf))
        self.scale = float(np.sqrt(eps * dt)) if noise else 0.0

        coeffs = ensemble.linear_coefficients()
        compiled = coeffs is not None and P.is_constant
        if engine == "compiled" and not compiled:
            raise ValidationError("compiled engine needs affine drifts and a constant chain")
        self.compiled = compiled and engine != "python"
        if self.compiled:
            self.A, self.c = (np.ascontiguousarray(a, dtype=float) for a in coeffs)
            pi = self.weights()
            self.Abar, self.cbar = np.einsum("k,kij->ij", pi, self.A), pi @ self.c
            self.cumP = np.cumsum(P.entries, axis=1)

    def run(self, seed: int, stream: int = 0, stride: int = 1) -> SwitchedTrajectory:
        n, p, dt = self.n, self.ensemble.dim, self.dt
        if stride < 1 or n % stride:
            raise ValidationError(f"stride {stride} must divide the {n} steps")
        rows = n // stride + 1
        if self.deterministic:
            path = integrate_averaged(self.ensemble, self.weights, self.x0, self.T, dt)
            empty = np.empty(0)
            return SwitchedTrajectory(dt, stride, path.values[::stride].copy(), np.full(rows, self.k0),
                                      empty, empty.astype(int), empty.astype(int), seed, stream)

        noise_gen, jump_gen = streams(seed, stream)
        if self.switching:
            ev_t, ev_u = _clock(jump_gen, self.eps, self.T)
        else:
            ev_t, ev_u = np.empty(0), np.empty(0)
        jump_from = np.zeros(ev_t.size, dtype=np.int64)
        jump_to = np.zeros(ev_t.size, dtype=np.int64)
        X = np.empty((rows, p))
        M = np.empty(rows, dtype=np.int64)
        X[0], M[0] = self.x0, self.k0

        x, mode, ptr, exit_step = self.x0.copy(), self.k0, 0, -1
        for i0 in range(0, n, CHUNK):
            m = min(CHUNK, n - i0)
            xi = noise_gen.standard_normal((m, p)) if self.noise else np.zeros((m, p))
            if self.compiled:
                mode, ptr, exit_step = em_affine_chunk(
                    x, mode, i0, xi, self.A, self.c, self.Abar, self.cbar, self.cumP, dt, self.scale,
                    ev_t, ev_u, ptr, self.switching, self.lo, self.hi, stride, X, M, jump_from, jump_to)
            else:
                x, mode, ptr, exit_step = _em_chunk_python(
                    x, mode, i0, xi, self.ensemble, self.weights, self.P, dt, self.scale,
                    ev_t, ev_u, ptr, self.switching, self.lo, self.hi, stride, X, M, jump_from, jump_to)
            if exit_step >= 0:
                break

        exit_time = None
        if exit_step >= 0:
            exit_time = exit_step * dt
            log.warning("trajectory left the domain box at t=%g; truncated", exit_time)
            last = exit_step // stride
            X, M = X[: last + 1], M[: last + 1]
            keep = ev_t <= last * stride * dt
            ev_t, jump_from, jump_to = ev_t[keep], jump_from[keep], jump_to[keep]
        return SwitchedTrajectory(dt, stride, X, M, ev_t, jump_from, jump_to, seed, stream, exit_time)


def simulate_switched(ensemble: DriftEnsemble, P: StochasticMatrix, eps: float, x0, k0: int,
                      T: float, dt: float, seed: int, *, noise: bool = True, switching: bool = True,
                      domain: DomainBox | None = None, stride: int = 1, stream: int = 0,
                      engine: str = "auto") -> SwitchedTrajectory:
    """Simulate one switched trajectory.

    With ``switching=False`` the mode process is replaced by its fast limit:
    the drift is the stationary average ``sum_k pi_k(x) f_k(x)`` and the mode
    label stays at ``k0``.  With both flags off the flow is deterministic and
    is integrated with RK4, matching :func:`integrate_averaged` exactly.

    ``engine`` selects the compiled loop (``"compiled"``, affine drifts and a
    constant chain only), the reference loop (``"python"``) or the best
    available (``"auto"``).  A run that leaves ``domain`` is truncated at the
    exit step and reports ``exit_time``.
    """
    runner = SwitchedRunner(ensemble, P, eps, x0, k0, T, dt, noise=noise, switching=switching,
                            domain=domain, engine=engine)
    return runner.run(seed, stream, stride)


def terminal_states(ensemble: DriftEnsemble, P: StochasticMatrix, eps: float, x0, k0: int, T: float,
                    dt: float, seed: int, trials: int, **kwargs) -> np.ndarray:
    """Terminal states of ``trials`` independent runs, trial ``j`` on stream ``j``."""
    runner = SwitchedRunner(ensemble, P, eps, x0, k0, T, dt, **kwargs)
    out = np.empty((trials, ensemble.dim))
    for j in range(trials):
        out[j] = runner.run(seed, stream=j, stride=runner.n).terminal
    return out


@dataclass(frozen=True)
class DeviationRow:
    eps: float
    median_sup_deviation: float
    deviations: tuple[float, ...]

    def to_dict(self) -> dict:
        return {"eps": self.eps, "median_sup_deviation": self.median_sup_deviation,
                "deviations": list(self.deviations)}


def averaging_deviation(ensemble: DriftEnsemble, P: StochasticMatrix, x0, k0: int, T: float,
                        dt: float | None, eps_list: Sequence[float], seeds: Sequence[int],
                        **kwargs) -> list[DeviationRow]:
    """Median over seeds of ``sup_t |X_t - x(t)|`` for each ``eps``.

    ``x(t)`` is the averaged flow from the same initial point, integrated on
    the same grid.  ``dt=None`` uses ``eps / 10`` for each ``eps``.
    """
    if not isinstance(P, StochasticMatrix):
        P = StochasticMatrix(P)
    weights = ChainWeights(P)
    rows = []
    for eps in eps_list:
        step = eps / 10 if dt is None else dt
        ref = integrate_averaged(ensemble, weights, x0, T, step).values
        devs = []
        for seed in seeds:
            traj = simulate_switched(ensemble, P, eps, x0, k0, T, step, seed, **kwargs)
            devs.append(float(np.max(np.linalg.norm(traj.states - ref[:: traj.stride][: len(traj.states)],
                                                    axis=1))))
        rows.append(DeviationRow(float(eps), float(np.median(devs)), tuple(devs)))
    return rows
