"""Exception types shared across the toolkit."""


class CesysidError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(CesysidError, ValueError):
    """An array argument has the wrong shape or length."""


class ConfigurationError(CesysidError, ValueError):
    """Invalid configuration value (bad key, nonpositive sigma, ...)."""


class IntegrationError(CesysidError, RuntimeError):
    """Nonfinite values produced during numerical integration.

    Carries the time (or time index) at which the failure occurred.
    """

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class DivergenceError(IntegrationError):
    """Trajectory rollout produced a nonfinite state."""


class EvaluationError(CesysidError, RuntimeError):
    """Model or objective evaluation failed (nonfinite output, bad factorization)."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class FilterDegeneracyError(CesysidError, RuntimeError):
    """All particle weights underflowed to zero at some time step."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class DatasetError(CesysidError, ValueError):
    """Malformed dataset directory, manifest, or trajectory file."""
