"""Exception types raised across the package."""


class SatCMError(Exception):
    """Base class for all package errors."""


class RejectedLineError(SatCMError, ValueError):
    """A line whose normalized coefficients are degenerate."""


class UnsupportedSaturationError(SatCMError, ValueError):
    pass


class ContractViolation(SatCMError, ValueError):
    """An argument is outside the documented domain of an operation."""


class EmptyAssociationError(SatCMError, ValueError):
    """No usable 2D-3D association could be formed."""


class SolverFailure(SatCMError, RuntimeError):
    pass
