"""Finite-state Markov chains: validation, ergodicity, stationary laws.

A :class:`StochasticMatrix` is either a fixed row-stochastic array or an
evaluator ``x -> P(x)`` for chains whose transition probabilities depend
on the continuous state.  All functions here are pure.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from math import gcd
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConvergenceError, NonErgodicError, ValidationError

ROW_SUM_TOL = 1e-12


def validate_stochastic(entries) -> np.ndarray:
    """Return ``entries`` as a float array after checking it is row-stochastic."""
    P = np.array(entries, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] < 1:
        raise ValidationError(f"stochastic matrix must be square and non-empty, got shape {P.shape}")
    if not np.all(np.isfinite(P)):
        raise ValidationError("stochastic matrix has non-finite entries")
    bad = np.argwhere(P < 0)
    if bad.size:
        i, j = bad[0]
        raise ValidationError(f"negative entry {float(P[i, j])!r} at row {i}, column {j}")
    sums = P.sum(axis=1)
    for i, s in enumerate(sums):
        if abs(s - 1.0) > ROW_SUM_TOL:
            raise ValidationError(f"row {i} sums to {float(s)!r}, expected 1 within {ROW_SUM_TOL:g}")
    return P


class StochasticMatrix:
    """K x K row-stochastic matrix, optionally depending on a state ``x``.

    Parameters
    ----------
    entries : array_like, optional
        Constant matrix. Mutually exclusive with ``evaluator``.
    evaluator : callable, optional
        Maps a state vector to a K x K matrix; every evaluation is validated.
    size : int, optional
        Number of states; required with ``evaluator``.
    """

    def __init__(self, entries=None, evaluator: Callable[[np.ndarray], np.ndarray] | None = None,
                 size: int | None = None):
        if (entries is None) == (evaluator is None):
            raise ValidationError("give exactly one of entries or evaluator")
        if entries is not None:
            self._entries = validate_stochastic(entries)
            self._entries.setflags(write=False)
            self.size = self._entries.shape[0]
            self.evaluator = None
        else:
            if size is None or size < 1:
                raise ValidationError("state-dependent matrix needs a positive size")
            self._entries = None
            self.size = int(size)
            self.evaluator = evaluator

    @property
    def is_constant(self) -> bool:
        return self.evaluator is None

    @property
    def entries(self) -> np.ndarray:
        if self._entries is None:
            raise ValidationError("state-dependent matrix has no fixed entries; use at(x)")
        return self._entries

    def at(self, x=None) -> np.ndarray:
        if self._entries is not None:
            return self._entries
        if x is None:
            raise ValidationError("state-dependent matrix must be evaluated at a state")
        P = validate_stochastic(self.evaluator(np.asarray(x, dtype=float)))
        if P.shape[0] != self.size:
            raise ValidationError(f"evaluator returned {P.shape[0]} states, expected {self.size}")
        return P

    def __repr__(self) -> str:
        kind = "constant" if self.is_constant else "state-dependent"
        return f"StochasticMatrix(K={self.size}, {kind})"


@dataclass(frozen=True)
class InvariantDistribution:
    weights: np.ndarray
    residual: float
    iterations: int

    def to_dict(self) -> dict:
        return {"pi": [float(w) for w in self.weights], "residual": float(self.residual),
                "iterations": int(self.iterations)}


def _as_array(P, x=None) -> np.ndarray:
    if isinstance(P, StochasticMatrix):
        return P.at(x)
    return validate_stochastic(P)


def _bfs_levels(adj: list[list[int]], start: int) -> list[int]:
    level = [-1] * len(adj)
    level[start] = 0
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if level[v] < 0:
                level[v] = level[u] + 1
                queue.append(v)
    return level


def ergodicity_diagnostic(P, x=None) -> str:
    """Classify the chain as ``"ergodic"``, ``"reducible"`` or ``"periodic"``.

    Edges are the strictly positive entries as stored.  The period is the
    gcd of ``level[u] + 1 - level[v]`` over all edges, with levels from a
    breadth-first search.
    """
    A = _as_array(P, x) > 0
    K = A.shape[0]
    fwd = [list(np.flatnonzero(A[i])) for i in range(K)]
    bwd = [list(np.flatnonzero(A[:, i])) for i in range(K)]
    level = _bfs_levels(fwd, 0)
    if min(level) < 0 or min(_bfs_levels(bwd, 0)) < 0:
        return "reducible"
    period = 0
    for u in range(K):
        for v in fwd[u]:
            period = gcd(period, abs(level[u] + 1 - level[v]))
    return "ergodic" if period == 1 else "periodic"


def is_irreducible_aperiodic(P, x=None) -> bool:
    return ergodicity_diagnostic(P, x) == "ergodic"


def _require_ergodic(P: np.ndarray) -> None:
    diag = ergodicity_diagnostic(P)
    if diag != "ergodic":
        raise NonErgodicError(f"chain is {diag}; no unique limiting distribution", diag)


def stationary_distribution(P, tol: float = 1e-13, x=None, max_iter: int = 10**6) -> InvariantDistribution:
    """Left fixed point of ``P`` by power iteration.

    Starts from the uniform vector, renormalises every 32 sweeps and stops
    once ``max|pi P - pi| <= tol``.
    """
    M = _as_array(P, x)
    _require_ergodic(M)
    K = M.shape[0]
    pi = np.full(K, 1.0 / K)
    residual = np.inf
    for it in range(1, max_iter + 1):
        nxt = pi @ M
        residual = float(np.max(np.abs(nxt - pi)))
        pi = nxt
        if it % 32 == 0:
            pi /= pi.sum()
        if residual <= tol:
            pi = pi / pi.sum()
            residual = float(np.max(np.abs(pi @ M - pi)))
            if residual <= tol:
                return InvariantDistribution(pi, residual, it)
    raise ConvergenceError(f"power iteration did not reach tol={tol:g} in {max_iter} sweeps "
                           f"(residual {residual:.3e})", residual=residual, iterations=max_iter)


def transitions_to_stationarity(P, start, tol: float = 1e-3, x=None, max_steps: int = 10**7) -> int:
    """Smallest n with ``||start P^n - pi||_1 <= tol``."""
    M = _as_array(P, x)
    pi = stationary_distribution(M).weights
    d = np.asarray(start, dtype=float)
    if d.shape != (M.shape[0],) or np.any(d < 0) or abs(d.sum() - 1.0) > ROW_SUM_TOL:
        raise ValidationError("start must be a probability vector of length K")
    for n in range(max_steps + 1):
        if np.abs(d - pi).sum() <= tol:
            return n
        d = d @ M
    raise ConvergenceError(f"distance above {tol:g} after {max_steps} transitions")


def stationary_gradient(P: StochasticMatrix, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of the stationary law, shape (K, p).

    Row ``k`` approximates the gradient of ``pi_k`` at ``x``.  The step in
    coordinate ``i`` is ``h * max(1, |x_i|)``.
    """
    x = np.asarray(x, dtype=float)
    K = P.size
    if P.is_constant:
        return np.zeros((K, x.size))
    grad = np.empty((K, x.size))
    for i in range(x.size):
        step = h * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        grad[:, i] = (stationary_distribution(P, x=xp).weights
                      - stationary_distribution(P, x=xm).weights) / (2 * step)
    return grad


def _parse_token(tok: str) -> float:
    if "/" in tok:
        return float(Fraction(tok))
    return float(tok)


def parse_matrix_text(text: str) -> np.ndarray:
    """One row per line, whitespace separated; ``#`` comments and ``a/b`` tokens allowed."""
    rows = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            rows.append([_parse_token(t) for t in line.split()])
        except (ValueError, ZeroDivisionError) as exc:
            raise ValidationError(f"matrix row {len(rows)}: {exc}") from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValidationError("matrix rows must be non-empty and of equal length")
    return np.array(rows)


def read_matrix(path) -> StochasticMatrix:
    return StochasticMatrix(parse_matrix_text(Path(path).read_text(encoding="utf-8")))


def cyclic_walk(K: int = 6, stay: float = 1 / 3) -> StochasticMatrix:
    """Lazy walk on a K-cycle: stay with ``stay``, otherwise step to either neighbour."""
    P = np.zeros((K, K))
    move = (1.0 - stay) / 2
    for k in range(K):
        P[k, k] += stay
        P[k, (k + 1) % K] += move
        P[k, (k - 1) % K] += move
    return StochasticMatrix(P)
