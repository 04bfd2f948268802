"""Exception and warning types raised across the package."""


class PointyError(Exception):
    """Base class for all package errors."""


class DomainError(PointyError, ValueError):
    """An argument lies outside the domain of the operation."""


class ConfigError(PointyError, ValueError):
    """A configuration or sampling spec is unusable."""


class DimensionError(PointyError, ValueError):
    """The operation is only defined for a different ambient dimension."""


class NumericalBlowup(PointyError, RuntimeError):
    """A simulated path left the ball of radius 1e6."""


class FitFailure(PointyError, RuntimeError):
    """No admissible escape constant satisfies the coverage criterion."""


class EmptyRange(PointyError, ValueError):
    """The requested comparison window contains no admissible samples."""


class DegenerateProfile(UserWarning):
    """The angular profile is constant, so its critical sets are not isolated."""


class UncheckedWarning(UserWarning):
    """A property was reported from empirical data only, without a check."""


class MissingInput(PointyError, FileNotFoundError):
    """A file the command depends on does not exist."""
