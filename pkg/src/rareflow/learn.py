"""Bootstrap ensembles of least-squares risks and their gradient flows.

Each ensemble member is the empirical risk of one bootstrap subsample::

    J_k(theta) = (1/m) sum_i 0.5 * (h_theta(x_i) - y_i)^2

For a model linear in ``theta`` this is a quadratic with Hessian ``G_k``
(the subsample Gram matrix of features) and the gradient flow
``theta' = -grad J_k`` is affine, so :class:`RiskEnsemble` plugs straight
into the switching and rare-path machinery.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass
from importlib import resources
from typing import Callable, Sequence

import numpy as np

from .chain import StochasticMatrix
from .ensemble import DiscretePath, DriftEnsemble, as_weights
from .errors import ValidationError
from .switching import SwitchedTrajectory, integrate_averaged, simulate_switched

log = logging.getLogger(__name__)

TEMPERATURE_RANGE = (273.15, 373.15)

DATASET_SOURCE = ("Specific heat of saturated liquid water, 273.15-373.15 K; "
                  "Incropera et al., Fundamentals of Heat and Mass Transfer, Table A.6.")


@dataclass
class Dataset:
    """Paired covariates and responses."""

    x: np.ndarray
    y: np.ndarray
    source: str = ""

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).reshape(-1)
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.x.size < 1 or self.x.size != self.y.size:
            raise ValidationError("dataset needs at least one record and matching x, y lengths")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValidationError("dataset entries must be finite")

    @property
    def n(self) -> int:
        return self.x.size

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(self.x[idx], self.y[idx], self.source)

    def check_range(self, lo: float, hi: float) -> None:
        if self.x.min() < lo or self.x.max() > hi:
            raise ValidationError(f"covariates must lie in [{lo}, {hi}]")

    @classmethod
    def from_csv(cls, path, source: str = "") -> "Dataset":
        with open(path, encoding="utf-8", newline="") as fh:
            return cls._parse(fh, source or str(path))

    @classmethod
    def _parse(cls, fh, source: str) -> "Dataset":
        reader = csv.reader(fh, skipinitialspace=True)
        header = next(reader, None)
        if header is None or len(header) < 2:
            raise ValidationError(f"{source}: expected a two-column header")
        rows = [r for r in reader if r and not r[0].startswith("#")]
        try:
            data = np.array([[float(r[0]), float(r[1])] for r in rows])
        except (ValueError, IndexError) as exc:
            raise ValidationError(f"{source}: {exc}") from exc
        if data.size == 0:
            raise ValidationError(f"{source}: no records")
        return cls(data[:, 0], data[:, 1], source)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["T_K", "cp_kJ_per_kgK"])
            w.writerows([[repr(float(a)), repr(float(b))] for a, b in zip(self.x, self.y)])


def saturated_water() -> Dataset:
    """The bundled 22-point table of liquid-water specific heat (kJ/kg/K) against temperature (K)."""
    with resources.files(__package__).joinpath("data/saturated_water.csv").open(encoding="utf-8") as fh:
        data = Dataset._parse(fh, DATASET_SOURCE)
    data.check_range(*TEMPERATURE_RANGE)
    return data


@dataclass(frozen=True)
class SubsampleSet:
    """``K`` index lists of length ``m`` into a parent dataset of size ``n``."""

    indices: np.ndarray
    n: int
    replacement: bool
    seed: int

    @property
    def count(self) -> int:
        return self.indices.shape[0]

    @property
    def size(self) -> int:
        return self.indices.shape[1]

    def to_dict(self) -> dict:
        return {"seed": self.seed, "replacement": self.replacement, "n": self.n,
                "indices": self.indices.tolist()}


def bootstrap_subsample(data: Dataset, K: int, m: int, with_replacement: bool, seed: int) -> SubsampleSet:
    """``K`` independent uniform draws of ``m`` indices, deterministic in ``seed``."""
    if K < 1 or m < 1:
        raise ValidationError("K and m must be positive")
    if not with_replacement and m > data.n:
        raise ValidationError(f"m={m} exceeds n={data.n} without replacement")
    rng = np.random.default_rng(seed)
    idx = np.stack([rng.choice(data.n, size=m, replace=with_replacement) for _ in range(K)])
    return SubsampleSet(idx.astype(np.int64), data.n, bool(with_replacement), int(seed))


def holdout_sample(data: Dataset, size: int, seed: int) -> np.ndarray:
    """Sorted indices of ``size`` distinct records, for a validation set."""
    if not 1 <= size <= data.n:
        raise ValidationError(f"holdout size must lie in 1..{data.n}")
    return np.sort(np.random.default_rng(seed).choice(data.n, size=size, replace=False))


class PolynomialModel:
    """``h(x) = sum_j theta_j z^j`` with ``z = (x - center) / scale``.

    ``theta`` lives in standardized coordinates; :meth:`to_original` gives the
    coefficients ``alpha`` of ``sum_j alpha_j x^j``.
    """

    def __init__(self, degree: int, center: float = 0.0, scale: float = 1.0):
        if degree < 0:
            raise ValidationError("degree must be non-negative")
        if not scale > 0:
            raise ValidationError("scale must be positive")
        self.degree, self.center, self.scale = int(degree), float(center), float(scale)
        self.n_params = self.degree + 1
        self._to_orig = self._basis_change()

    @classmethod
    def standardized(cls, degree: int, x) -> "PolynomialModel":
        x = np.asarray(x, dtype=float)
        s = float(x.std())
        return cls(degree, float(x.mean()), s if s > 0 else 1.0)

    def features(self, x) -> np.ndarray:
        z = (np.asarray(x, dtype=float) - self.center) / self.scale
        return np.power.outer(z, np.arange(self.n_params))

    def __call__(self, theta, x) -> np.ndarray:
        return self.features(x) @ np.asarray(theta, dtype=float)

    def gradient(self, theta, x) -> np.ndarray:
        """d h / d theta, which is the feature vector."""
        return self.features(x)

    def _basis_change(self) -> np.ndarray:
        d, c, s = self.degree, self.center, self.scale
        M = np.zeros((d + 1, d + 1))
        for j in range(d + 1):
            for i in range(j + 1):
                M[i, j] = math.comb(j, i) * (-c) ** (j - i) / s**j
        return M

    def to_original(self, theta) -> np.ndarray:
        return self._to_orig @ np.asarray(theta, dtype=float)

    def from_original(self, alpha) -> np.ndarray:
        return np.linalg.solve(self._to_orig, np.asarray(alpha, dtype=float))


def polynomial_curve(alpha, x) -> np.ndarray:
    """``sum_j alpha_j x^j`` in original units."""
    return np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), np.asarray(alpha, dtype=float))


def kelvin_grid(lo: float = TEMPERATURE_RANGE[0], hi: float = TEMPERATURE_RANGE[1], step: float = 1.0):
    n = int(round((hi - lo) / step))
    return lo + step * np.arange(n + 1)


def curve_distance(alpha_a, alpha_b, grid=None) -> float:
    grid = kelvin_grid() if grid is None else grid
    return float(np.max(np.abs(polynomial_curve(alpha_a, grid) - polynomial_curve(alpha_b, grid))))


def _check_nonempty(x):
    if np.asarray(x).size == 0:
        raise ValidationError("empty subset")


def empirical_risk(theta, x, y, model) -> float:
    """Mean squared-error loss ``0.5 * (h - y)^2`` over the records."""
    _check_nonempty(x)
    r = model(theta, x) - np.asarray(y, dtype=float)
    return 0.5 * float(np.mean(r * r))


def risk_gradient(theta, x, y, model) -> np.ndarray:
    _check_nonempty(x)
    F = model.gradient(theta, x)
    return F.T @ (model(theta, x) - np.asarray(y, dtype=float)) / F.shape[0]


def risk_hessian(theta, x, y, model) -> np.ndarray:
    """Gauss-Newton form, exact for models linear in ``theta``."""
    _check_nonempty(x)
    F = model.gradient(theta, x)
    return F.T @ F / F.shape[0]


class LeastSquaresRisk:
    """Quadratic risk ``0.5 theta^T G theta - q^T theta + r`` of one record set."""

    def __init__(self, model: PolynomialModel, x, y):
        x = np.asarray(x, dtype=float).reshape(-1)
        y = np.asarray(y, dtype=float).reshape(-1)
        _check_nonempty(x)
        F = model.features(x)
        self.model = model
        self.gram = F.T @ F / x.size
        self.moment = F.T @ y / x.size
        self.offset = 0.5 * float(y @ y) / x.size
        self.x, self.y = x, y

    def __call__(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        val = 0.5 * theta @ self.gram @ theta - self.moment @ theta + self.offset
        return float(max(val, 0.0))

    def gradient(self, theta) -> np.ndarray:
        return self.gram @ np.asarray(theta, dtype=float) - self.moment

    def hessian(self, theta=None) -> np.ndarray:
        return self.gram


class RiskEnsemble(DriftEnsemble):
    """Gradient-descent drifts ``f_k = -grad J_k`` of quadratic risks."""

    def __init__(self, risks: Sequence[LeastSquaresRisk]):
        if not risks:
            raise ValidationError("need at least one risk")
        self.risks = list(risks)
        self.count, self.dim = len(risks), risks[0].gram.shape[0]
        self.G = np.stack([r.gram for r in risks])
        self.q = np.stack([r.moment for r in risks])

    @classmethod
    def from_subsamples(cls, data: Dataset, subsets: SubsampleSet, model: PolynomialModel) -> "RiskEnsemble":
        return cls([LeastSquaresRisk(model, data.x[i], data.y[i]) for i in subsets.indices])

    def risk_values(self, theta) -> np.ndarray:
        return np.array([r(theta) for r in self.risks])

    def gradients(self, theta) -> np.ndarray:
        return np.einsum("kij,...j->...ki", self.G, np.asarray(theta, dtype=float)) - self.q

    def drifts(self, x):
        return -self.gradients(x)

    def jacobians(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(-self.G, x.shape[:-1] + self.G.shape)

    def linear_coefficients(self):
        return -self.G, self.q

    def normal_equations(self, pi) -> tuple[np.ndarray, np.ndarray]:
        """Weighted Gram matrix and moment vector."""
        pi = np.asarray(pi, dtype=float)
        return np.einsum("k,kij->ij", pi, self.G), pi @ self.q

    def weighted_solution(self, pi) -> np.ndarray:
        A, b = self.normal_equations(pi)
        return np.linalg.solve(A, b)


@dataclass
class FlowResult:
    path: DiscretePath
    steady_state: np.ndarray
    gradient_norm: float
    converged: bool

    def to_dict(self) -> dict:
        return {"steady_state": [float(v) for v in self.steady_state], "gradient_norm": self.gradient_norm,
                "converged": self.converged, "horizon": self.path.horizon, "dt": self.path.dt}


def averaged_gradient_flow(ensemble: RiskEnsemble, weights, theta0, T: float, dt: float,
                           tol: float = 1e-10) -> FlowResult:
    """RK4 solution of ``theta' = -sum_k pi_k grad J_k(theta)``.

    The terminal point is declared a steady state when the averaged gradient
    norm there is at most ``tol``; otherwise a warning reports the norm.
    """
    w = as_weights(weights)
    path = integrate_averaged(ensemble, w, theta0, T, dt)
    end = path.values[-1]
    gnorm = float(np.linalg.norm(w(end) @ ensemble.gradients(end)))
    converged = gnorm <= tol
    if not converged:
        warnings.warn(f"averaged flow not stationary at T={T:g}: gradient norm {gnorm:.3e}", RuntimeWarning,
                      stacklevel=2)
    return FlowResult(path, end.copy(), gnorm, converged)


def perturbed_gradient_flow(ensemble: RiskEnsemble, P: StochasticMatrix, eps: float, theta0, k0: int,
                            T: float, dt: float, seed: int, **kwargs) -> SwitchedTrajectory:
    """Switched noisy gradient descent; see :func:`simulate_switched` for options."""
    return simulate_switched(ensemble, P, eps, theta0, k0, T, dt, seed, **kwargs)


@dataclass
class CoercivityReport:
    radii: np.ndarray
    ratios: np.ndarray  # (members, directions, radii)
    flagged: list[tuple[int, int]]

    @property
    def coercive(self) -> bool:
        return not self.flagged

    def to_dict(self) -> dict:
        return {"radii": self.radii.tolist(), "ratios": self.ratios.tolist(),
                "flagged": [list(f) for f in self.flagged], "coercive": self.coercive}


def coercivity_check(risks: Sequence[Callable] | RiskEnsemble, directions, radii=None) -> CoercivityReport:
    """``J_k(r u) / r`` along rays ``u``; flags any ray where the ratio fails to increase.

    ``risks`` is a :class:`RiskEnsemble` or a sequence of callables.
    Directions are normalized.  Report only, nothing is raised.
    """
    if isinstance(risks, RiskEnsemble):
        risks = risks.risks
    radii = np.logspace(1, 4, 7) if radii is None else np.asarray(radii, dtype=float)
    if np.any(np.diff(radii) <= 0):
        raise ValidationError("radii must be increasing")
    U = np.atleast_2d(np.asarray(directions, dtype=float))
    U = U / np.linalg.norm(U, axis=1, keepdims=True)
    ratios = np.array([[[J(r * u) / r for r in radii] for u in U] for J in risks])
    flagged = [(k, d) for k in range(ratios.shape[0]) for d in range(ratios.shape[1])
               if np.any(np.diff(ratios[k, d]) <= 0)]
    return CoercivityReport(radii, ratios, flagged)
