"""Quadratic Lagrangian, its Hamiltonian, and path functionals.

For the averaged drift ``b(x) = sum_k pi_k(x) f_k(x)``::

    L(x, v)   = 0.5 * |v - b(x)|^2
    H(x, psi) = <b(x), psi> + 0.5 * |psi|^2

and the Hamiltonian system is ``x' = b(x) + psi``, ``psi' = -Db(x)^T psi``.
A risk ensemble fits the same formulas with ``f_k = -grad J_k``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .ensemble import (DiscretePath, DriftEnsemble, as_weights, averaged_drift, averaged_jacobian,
                       grid_steps)
from .errors import BlowUpError, ValidationError


@dataclass(frozen=True)
class ActionValue:
    value: float
    rule: str
    n_nodes: int
    dt: float

    def __post_init__(self):
        if not self.value >= 0:
            raise ValidationError(f"action must be non-negative, got {self.value}")

    def to_dict(self) -> dict:
        return {"value": self.value, "rule": self.rule, "n_nodes": self.n_nodes, "dt": self.dt}


def lagrangian(ensemble: DriftEnsemble, weights, phi, v) -> float:
    w = as_weights(weights)
    r = np.asarray(v, dtype=float) - averaged_drift(ensemble, w, np.asarray(phi, dtype=float))
    return 0.5 * float(r @ r)


def hamiltonian(ensemble: DriftEnsemble, weights, phi, psi) -> float:
    w = as_weights(weights)
    psi = np.asarray(psi, dtype=float)
    return float(averaged_drift(ensemble, w, np.asarray(phi, dtype=float)) @ psi + 0.5 * psi @ psi)


def path_velocity(path: DiscretePath) -> np.ndarray:
    """Second-order differences: central inside, one-sided at both ends."""
    if len(path) < 3:
        raise ValidationError("need at least 3 grid nodes")
    return np.gradient(path.values, path.dt, axis=0, edge_order=2)


def _drift_on_path(ensemble, w, values: np.ndarray) -> np.ndarray:
    if w.is_constant:
        return np.einsum("k,nkp->np", w(), ensemble.drifts(values))
    return np.array([averaged_drift(ensemble, w, x) for x in values])


def action(path: DiscretePath, ensemble: DriftEnsemble, weights) -> ActionValue:
    """Trapezoid quadrature of ``L(phi, phi')`` along a discrete path."""
    w = as_weights(weights)
    vel = path_velocity(path)
    r = vel - _drift_on_path(ensemble, w, path.values)
    lag = 0.5 * np.einsum("np,np->n", r, r)
    value = float(path.dt * (lag.sum() - 0.5 * (lag[0] + lag[-1])))
    return ActionValue(value, "trapezoid", len(path), path.dt)


@dataclass(frozen=True)
class FlowResidual:
    times: np.ndarray
    r_phi: np.ndarray
    r_psi: np.ndarray

    @property
    def phi_norm(self) -> np.ndarray:
        return np.linalg.norm(self.r_phi, axis=1)

    @property
    def psi_norm(self) -> np.ndarray:
        return np.linalg.norm(self.r_psi, axis=1)


def hamiltonian_flow_residual(phi_path: DiscretePath, psi_path: DiscretePath, ensemble: DriftEnsemble,
                              weights) -> FlowResidual:
    """Node-wise ``phi' - b - psi`` and ``psi' + Db^T psi`` with differenced derivatives."""
    if len(phi_path) != len(psi_path) or abs(phi_path.dt - psi_path.dt) > 1e-15 * phi_path.dt:
        raise ValidationError("phi and psi paths must share the same grid")
    w = as_weights(weights)
    phi, psi = phi_path.values, psi_path.values
    r_phi = path_velocity(phi_path) - _drift_on_path(ensemble, w, phi) - psi
    adj = np.array([averaged_jacobian(ensemble, w, x).T @ y for x, y in zip(phi, psi)])
    r_psi = path_velocity(psi_path) + adj
    return FlowResidual(phi_path.times, r_phi, r_psi)


def integrate_hamiltonian(ensemble: DriftEnsemble, weights, phi0, psi0, T: float, dt: float
                          ) -> tuple[DiscretePath, DiscretePath]:
    """RK4 initial-value solve of the Hamiltonian system."""
    w = as_weights(weights)
    n = grid_steps(T, dt)
    p = ensemble.dim

    def rhs(z):
        x, y = z[:p], z[p:]
        return np.concatenate([averaged_drift(ensemble, w, x) + y, -averaged_jacobian(ensemble, w, x).T @ y])

    z = np.concatenate([np.asarray(phi0, dtype=float), np.asarray(psi0, dtype=float)])
    out = np.empty((n + 1, 2 * p))
    out[0] = z
    for i in range(n):
        k1 = rhs(z)
        k2 = rhs(z + dt / 2 * k1)
        k3 = rhs(z + dt / 2 * k2)
        k4 = rhs(z + dt * k3)
        z = z + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(z)):
            raise BlowUpError(f"Hamiltonian flow blew up at t={(i + 1) * dt:g}", time=(i + 1) * dt)
        out[i + 1] = z
    return DiscretePath(out[:, :p], dt), DiscretePath(out[:, p:], dt)


def legendre_duality_check(ensemble: DriftEnsemble, weights, points, velocities,
                           hamiltonian_fn: Callable | None = None) -> float:
    """Largest gap between ``L`` and the Legendre transform of ``H`` on samples.

    For each pair ``(x, v)`` the supremum over ``psi`` is attained at
    ``psi* = v - b(x)``; the conjugate direction is checked too, comparing
    ``H(x, psi)`` with ``<psi, v*> - L(x, v*)`` at ``v* = b(x) + psi`` for
    ``psi = v``.  ``hamiltonian_fn(x, psi)`` overrides :func:`hamiltonian`.
    """
    w = as_weights(weights)
    H = hamiltonian_fn or (lambda x, y: hamiltonian(ensemble, w, x, y))
    gap = 0.0
    for x, v in zip(np.atleast_2d(points), np.atleast_2d(velocities)):
        b = averaged_drift(ensemble, w, x)
        psi_star = v - b
        gap = max(gap, abs(lagrangian(ensemble, w, x, v) - (psi_star @ v - H(x, psi_star))))
        v_star = b + v
        gap = max(gap, abs(H(x, v) - (v @ v_star - lagrangian(ensemble, w, x, v_star))))
    return float(gap)
