"""
非同步观测二维扩散过程的拟似然估计
"""

__version__ = "1.0.0"
__author__ = "NSync Team"

from .errors import (ConfigError, ContractError, DataError, DomainError, EstimationError,
                     IdentifiabilityError, NotPositiveDefiniteError, NSyncError,
                     NumericalError, QuadratureError, RunFailureError)
from .model import CoefficientModel, ParamSpace, TimeStructure, constant_model, periodic_model
from .sampling import (OverlapMatrix, SamplingScheme, SchemeConstants, SchemeGenerator,
                       build_overlap, estimate_constants, generate_equidistant,
                       generate_poisson, generate_shifted)
from .gaussian import CovarianceOperator, IncrementVector, assemble, simulate_increments
from .estimator import EstimateReport, OptimizerConfig, estimate, hayashi_yoshida
from .asymptotics import LimitConstants, gamma1, gamma2, information_matrix, lan_experiment
from .montecarlo import RunSummary, run_monte_carlo, run_replications

__all__ = [
    "__version__",
    "NSyncError", "ConfigError", "DataError", "DomainError", "ContractError",
    "NumericalError", "QuadratureError", "NotPositiveDefiniteError",
    "IdentifiabilityError", "EstimationError", "RunFailureError",
    "CoefficientModel", "ParamSpace", "TimeStructure", "constant_model", "periodic_model",
    "SamplingScheme", "OverlapMatrix", "SchemeConstants", "SchemeGenerator",
    "build_overlap", "estimate_constants", "generate_poisson", "generate_equidistant",
    "generate_shifted",
    "IncrementVector", "CovarianceOperator", "assemble", "simulate_increments",
    "OptimizerConfig", "EstimateReport", "estimate", "hayashi_yoshida",
    "LimitConstants", "gamma1", "gamma2", "information_matrix", "lan_experiment",
    "RunSummary", "run_monte_carlo", "run_replications",
]
