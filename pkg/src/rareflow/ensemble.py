"""Drift ensembles, stationary weight providers and discrete paths.

An ensemble holds K vector fields ``f_k`` on R^p.  Evaluators accept a
single state of shape ``(p,)`` or a batch ``(n, p)`` and return drifts of
shape ``(..., K, p)`` and Jacobians of shape ``(..., K, p, p)`` with
``jac[k, i, j] = d f_k,i / d x_j``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .chain import StochasticMatrix, stationary_distribution, stationary_gradient
from .errors import BlowUpError, ValidationError


class DriftEnsemble:
    """Base class; subclasses implement :meth:`drifts` and :meth:`jacobians`."""

    dim: int
    count: int

    def drifts(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobians(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def linear_coefficients(self) -> tuple[np.ndarray, np.ndarray] | None:
        """``(A, c)`` with ``f_k(x) = A[k] @ x + c[k]`` when the ensemble is affine."""
        return None


class LinearDriftEnsemble(DriftEnsemble):
    """Affine drifts ``f_k(x) = A_k x + c_k``."""

    def __init__(self, A, c=None):
        A = np.array(A, dtype=float)
        if A.ndim == 2:
            A = A[None]
        if A.ndim != 3 or A.shape[1] != A.shape[2]:
            raise ValidationError(f"A must have shape (K, p, p), got {A.shape}")
        self.count, self.dim = A.shape[0], A.shape[1]
        c = np.zeros((self.count, self.dim)) if c is None else np.array(c, dtype=float).reshape(self.count, self.dim)
        self.A, self.c = A, c

    def drifts(self, x):
        return np.einsum("kij,...j->...ki", self.A, np.asarray(x, dtype=float)) + self.c

    def jacobians(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.A, x.shape[:-1] + self.A.shape)

    def linear_coefficients(self):
        return self.A, self.c


class FunctionEnsemble(DriftEnsemble):
    """Ensemble built from per-member callables acting on a single state."""

    def __init__(self, drifts: Sequence[Callable], jacobians: Sequence[Callable], dim: int):
        if len(drifts) != len(jacobians) or not drifts:
            raise ValidationError("need one Jacobian per drift and at least one drift")
        self._f, self._jac = list(drifts), list(jacobians)
        self.count, self.dim = len(drifts), int(dim)

    def _eval(self, fns, x, shape):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return np.stack([np.asarray(f(x), dtype=float).reshape(shape) for f in fns])
        return np.stack([self._eval(fns, xi, shape) for xi in x])

    def drifts(self, x):
        return self._eval(self._f, x, (self.dim,))

    def jacobians(self, x):
        return self._eval(self._jac, x, (self.dim, self.dim))


def check_jacobians(ensemble: DriftEnsemble, points, h: float = 1e-6) -> float:
    """Largest relative mismatch between analytic and central-difference Jacobians."""
    worst = 0.0
    for x in np.atleast_2d(np.asarray(points, dtype=float)):
        J = ensemble.jacobians(x)
        fd = np.empty_like(J)
        for j in range(x.size):
            e = np.zeros_like(x)
            e[j] = h * max(1.0, abs(x[j]))
            fd[..., j] = (ensemble.drifts(x + e) - ensemble.drifts(x - e)) / (2 * e[j])
        worst = max(worst, float(np.max(np.abs(J - fd)) / max(1.0, float(np.max(np.abs(J))))))
    return worst


class ConstantWeights:
    """State-independent stationary weights."""

    def __init__(self, pi):
        pi = np.array(pi, dtype=float)
        if pi.ndim != 1 or np.any(pi <= 0) or abs(pi.sum() - 1.0) > 1e-12:
            raise ValidationError("weights must be strictly positive and sum to 1")
        self.pi = pi
        self.count = pi.size

    is_constant = True

    def __call__(self, x=None) -> np.ndarray:
        return self.pi

    def gradient(self, x) -> np.ndarray:
        return np.zeros((self.count, np.asarray(x).shape[-1]))

    @classmethod
    def from_chain(cls, P) -> "ConstantWeights":
        return cls(stationary_distribution(P).weights)


class ChainWeights:
    """Weights ``pi(x)`` read off a state-dependent stochastic matrix."""

    def __init__(self, matrix: StochasticMatrix, h: float = 1e-5):
        self.matrix = matrix
        self.count = matrix.size
        self.h = h
        self.is_constant = matrix.is_constant
        if self.is_constant:
            self._pi = stationary_distribution(matrix).weights

    def __call__(self, x=None) -> np.ndarray:
        if self.is_constant:
            return self._pi
        return stationary_distribution(self.matrix, x=x).weights

    def gradient(self, x) -> np.ndarray:
        return stationary_gradient(self.matrix, x, self.h)


def as_weights(weights):
    if isinstance(weights, (ConstantWeights, ChainWeights)):
        return weights
    if isinstance(weights, StochasticMatrix):
        return ChainWeights(weights)
    return ConstantWeights(weights)


def averaged_drift(ensemble: DriftEnsemble, weights, x) -> np.ndarray:
    """``sum_k pi_k(x) f_k(x)`` for one state."""
    return weights(x) @ ensemble.drifts(x)


def averaged_jacobian(ensemble: DriftEnsemble, weights, x) -> np.ndarray:
    """Jacobian of the averaged drift: ``sum_k f_k grad(pi_k)^T + pi_k Df_k``."""
    x = np.asarray(x, dtype=float)
    J = np.einsum("k,kij->ij", weights(x), ensemble.jacobians(x))
    if not weights.is_constant:
        J = J + ensemble.drifts(x).T @ weights.gradient(x)
    return J


def averaged_field(ensemble: DriftEnsemble, weights) -> tuple[Callable, Callable]:
    """``(b, Db)`` callables for the averaged drift, precomputed when affine with fixed weights."""
    w = as_weights(weights)
    coeffs = ensemble.linear_coefficients()
    if coeffs is not None and w.is_constant:
        A, c = coeffs
        Abar, cbar = np.einsum("k,kij->ij", w(), A), w() @ c
        return (lambda x: Abar @ x + cbar), (lambda x: Abar)
    return (lambda x: averaged_drift(ensemble, w, x)), (lambda x: averaged_jacobian(ensemble, w, x))


@dataclass
class DiscretePath:
    """Values on the uniform grid ``t_i = i * dt``, ``i = 0..n``."""

    values: np.ndarray
    dt: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.dt <= 0:
            raise ValidationError("dt must be positive")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("path values must be finite")

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.values.shape[0]) * self.dt

    @property
    def horizon(self) -> float:
        return (self.values.shape[0] - 1) * self.dt

    @property
    def n_steps(self) -> int:
        return self.values.shape[0] - 1

    def __len__(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_function(cls, fn: Callable[[np.ndarray], np.ndarray], T: float, dt: float) -> "DiscretePath":
        n = grid_steps(T, dt)
        t = np.arange(n + 1) * dt
        return cls(np.asarray(fn(t), dtype=float), dt)


def grid_steps(T: float, dt: float) -> int:
    """Number of steps of size ``dt`` covering ``[0, T]``; ``dt`` must divide ``T``."""
    if T <= 0 or dt <= 0:
        raise ValidationError("T and dt must be positive")
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValidationError(f"dt={dt!r} does not divide T={T!r}")
    return n


def rk4_path(rhs: Callable[[float, np.ndarray], np.ndarray], x0, T: float, dt: float) -> DiscretePath:
    """Classical 4th-order Runge-Kutta on the uniform grid; raises on non-finite states."""
    n = grid_steps(T, dt)
    x = np.array(x0, dtype=float).reshape(-1)
    out = np.empty((n + 1, x.size))
    out[0] = x
    for i in range(n):
        t = i * dt
        k1 = rhs(t, x)
        k2 = rhs(t + dt / 2, x + dt / 2 * k1)
        k3 = rhs(t + dt / 2, x + dt / 2 * k2)
        k4 = rhs(t + dt, x + dt * k3)
        x = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise BlowUpError(f"non-finite state at t={t + dt:g}", time=t + dt)
        out[i + 1] = x
    return DiscretePath(out, dt)
