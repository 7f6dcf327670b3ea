"""Exception hierarchy shared by every stage of the estimator."""


class SFMAError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(SFMAError, ValueError):
    """Input outside the domain of a special function."""


class SpecError(SFMAError, ValueError):
    """Invalid spline specification or incompatible shape request."""


class UnsupportedOrderError(SpecError):
    """Requested derivative order exceeds the spline degree."""


class IllPosedError(SFMAError, ArithmeticError):
    """Variance collapse: total per-point variance fell below the floor."""


class BoundaryError(SFMAError, ValueError):
    """Derivative requested at the gamma = 0 or eta = 0 boundary."""


class ConfigError(SFMAError, ValueError):
    """Bad run, trimming, simulation or solver configuration."""


class DataError(SFMAError, ValueError):
    """Malformed or invalid input data."""


class SolverError(SFMAError, RuntimeError):
    """Base class for numerical solver failures."""

    def __init__(self, message, block=None, iteration=None):
        super().__init__(message)
        self.block = block
        self.iteration = iteration


class ConditioningError(SolverError):
    """Newton system stayed singular after regularization."""


class ConvergenceError(SolverError):
    """Iteration limit hit; ``best`` holds the best iterate seen."""

    def __init__(self, message, best=None, residual=None, **kwargs):
        super().__init__(message, **kwargs)
        self.best = best
        self.residual = residual
