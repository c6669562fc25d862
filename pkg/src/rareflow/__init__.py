"""Averaged switched dynamics, minimum-action rare paths and bootstrap gradient flows."""

__version__ = "0.1.0"

from .action import (action, hamiltonian, hamiltonian_flow_residual, integrate_hamiltonian, lagrangian,
                     legendre_duality_check)
from .chain import (StochasticMatrix, cyclic_walk, is_irreducible_aperiodic, stationary_distribution,
                    stationary_gradient, transitions_to_stationarity)
from .ensemble import (ChainWeights, ConstantWeights, DiscretePath, FunctionEnsemble, LinearDriftEnsemble)
from .errors import (BlowUpError, CensoredError, ConvergenceError, NonErgodicError, NumericalError,
                     PreconditionError, RareflowError, ValidationError)
from .learn import (Dataset, PolynomialModel, RiskEnsemble, averaged_gradient_flow, bootstrap_subsample,
                    coercivity_check, empirical_risk, perturbed_gradient_flow, risk_gradient, risk_hessian,
                    saturated_water)
from .rarepath import (GaussianBump, QuadraticTerminal, RareEventProblem, ldp_log_probability,
                       mc_rare_probability, solve_constrained, solve_rare_event)
from .switching import averaging_deviation, integrate_averaged, simulate_switched

__all__ = [
    "action", "hamiltonian", "hamiltonian_flow_residual", "integrate_hamiltonian", "lagrangian",
    "legendre_duality_check", "StochasticMatrix", "cyclic_walk", "is_irreducible_aperiodic",
    "stationary_distribution", "stationary_gradient", "transitions_to_stationarity", "ChainWeights",
    "ConstantWeights", "DiscretePath", "FunctionEnsemble", "LinearDriftEnsemble", "BlowUpError",
    "CensoredError", "ConvergenceError", "NonErgodicError", "NumericalError", "PreconditionError",
    "RareflowError", "ValidationError", "Dataset", "PolynomialModel", "RiskEnsemble",
    "averaged_gradient_flow", "bootstrap_subsample", "coercivity_check", "empirical_risk",
    "perturbed_gradient_flow", "risk_gradient", "risk_hessian", "saturated_water", "GaussianBump",
    "QuadraticTerminal", "RareEventProblem", "ldp_log_probability", "mc_rare_probability",
    "solve_constrained", "solve_rare_event", "averaging_deviation", "integrate_averaged",
    "simulate_switched",
]
