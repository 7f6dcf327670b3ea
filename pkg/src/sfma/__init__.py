"""Stochastic frontier meta-analysis: shape-constrained spline frontiers with
reported errors, half-normal inefficiency and likelihood trimming."""
from .errors import (
    BoundaryError,
    ConditioningError,
    ConfigError,
    ConvergenceError,
    DataError,
    DomainError,
    IllPosedError,
    SFMAError,
    SolverError,
    SpecError,
    UnsupportedOrderError,
)
from .inefficiency import FitResult, estimate_inefficiencies, predict_frontier
from .likelihood import Dataset, LikelihoodContext, Params, nll_terms, objective
from .model import FrontierModel
from .solvers import FitOptions, bcd_fit, ipm_solve, scalar_minimize
from .special import ln_erfc, ln_erfc_d1, ln_erfc_d2
from .splines import ConstraintSet, SplineSpec, design_matrix, eval_basis, shape_constraints
from .trimming import TrimConfig, project_capped_simplex, trimmed_fit

__version__ = "0.1.0"

__all__ = [
    "BoundaryError", "ConditioningError", "ConfigError", "ConvergenceError", "DataError",
    "DomainError", "IllPosedError", "SFMAError", "SolverError", "SpecError",
    "UnsupportedOrderError",
    "FitResult", "estimate_inefficiencies", "predict_frontier",
    "Dataset", "LikelihoodContext", "Params", "nll_terms", "objective",
    "FrontierModel",
    "FitOptions", "bcd_fit", "ipm_solve", "scalar_minimize",
    "ln_erfc", "ln_erfc_d1", "ln_erfc_d2",
    "ConstraintSet", "SplineSpec", "design_matrix", "eval_basis", "shape_constraints",
    "TrimConfig", "project_capped_simplex", "trimmed_fit",
]
