"""Exception hierarchy shared across the package."""


class IcdeError(Exception):
    """Base class for all package errors."""


class DimensionError(IcdeError, ValueError):
    """Objects live on incompatible grids or have the wrong length."""


class NumericalError(IcdeError, ArithmeticError):
    """A numerical routine failed (non-convergence, factorization failure)."""


class ProtocolError(IcdeError):
    """A provider answered with a malformed or unexpected payload."""


class ProviderError(IcdeError):
    """A provider could not be reached after the retry budget.

    ``partial`` carries whatever was assembled before the failure, e.g. a
    truncated :class:`~icdetraj.prob.Trajectory` or the hierarchy depth reached.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class ConfigError(IcdeError, ValueError):
    """Invalid experiment configuration."""
