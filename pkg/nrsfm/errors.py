"""
Exception hierarchy for the reconstruction toolkit.

Three families map onto CLI exit codes: configuration problems (2),
problems with the input data (3) and numerical failures (4).
"""


class NrsfmError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1

    @property
    def kind(self) -> str:
        return type(self).__name__


class ConfigError(NrsfmError, ValueError):
    """Invalid configuration value, unknown key or unknown backend."""

    exit_code = 2


class DataError(NrsfmError, ValueError):
    """Input data violates a documented invariant."""

    exit_code = 3


class TrackError(DataError):
    """Malformed or inconsistent track observations."""


class GraphConstructionError(DataError):
    """A neighbor graph cannot be built for some point."""


class ParameterError(DataError):
    """Synthetic-scene or problem parameters out of range."""


class RejectedPairError(DataError):
    """A rigid pair has no finite gamma coefficient."""


class RejectedHypothesisError(DataError):
    """An IAC hypothesis is not positive definite."""


class NumericalError(NrsfmError, RuntimeError):
    """A computation failed numerically."""

    exit_code = 4


class SingularIntrinsicsError(NumericalError):
    """The camera matrix cannot be inverted."""


class UnboundedProblemError(NumericalError):
    """A depth-maximization program has no finite optimum."""


class UnreachableError(NumericalError):
    """A geodesic query pair lies in different graph components."""


class SolverError(NumericalError):
    """The conic solver returned an unusable status."""

    def __init__(self, message: str, result=None):
        super().__init__(message)
        self.result = result
