"""Exception hierarchy shared by all modules.

The CLI maps ``ConfigurationError`` to exit code 2 and ``NumericError`` to
exit code 3.
"""


class RotlimError(Exception):
    """Base class for every error raised by the package."""


class ConfigurationError(RotlimError, ValueError):
    """Invalid parameters, mismatched grids, malformed config files."""


class DomainError(RotlimError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class PreconditionError(DomainError):
    """Input violates a stated precondition (e.g. spectral support)."""


class ResolutionError(DomainError):
    """A time series is too coarse for the requested quadrature."""


class DegenerateError(DomainError):
    """A ratio or fit has a vanishing denominator."""


class RegressionError(DegenerateError):
    """Least-squares fit requested on a degenerate abscissa."""


class NumericError(RotlimError, ArithmeticError):
    """Non-finite values or a failed time step."""


class VacuumError(NumericError):
    """Density reached zero or below; the smooth solver cannot continue."""


class StepSizeError(NumericError):
    """Time step violates the advective CFL restriction."""


class ResourceError(NumericError):
    """A sweep member exceeded its wall-clock budget."""


class VacuumRiskError(ConfigurationError):
    """Requested initial amplitude would push the density below 1/2."""
