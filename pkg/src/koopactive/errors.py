"""Exception hierarchy used throughout the package."""


class KoopactiveError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(KoopactiveError, ValueError):
    """An argument has the wrong shape or an inconsistent dimension."""


class DataQualityError(KoopactiveError, ValueError):
    """A data sample contains non-finite entries."""


class DegenerateDataError(KoopactiveError, ValueError):
    """The accumulated moments carry no usable excitation (e.g. all zero)."""


class IntegrationBlowupError(KoopactiveError, FloatingPointError):
    """A fixed-step integration produced a non-finite state.

    The offending state is attached as ``state``.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class HorizonDivergenceError(KoopactiveError, FloatingPointError):
    """A lifted-space horizon rollout diverged; the caller may shorten the horizon."""


class MatrixLogError(KoopactiveError, ValueError):
    """The principal matrix logarithm is undefined or could not be computed.

    Raised only after the sampling-interval subdivision fallback has been
    exhausted.  Callers typically keep their previous model.
    """


class UnstabilizableModelError(KoopactiveError, RuntimeError):
    """Backward Riccati integration diverged; the model is not stabilizable.

    Callers may re-collect data or fall back to a zero policy.
    """


class CorrelationUndefinedError(KoopactiveError, ValueError):
    """Pearson correlation is undefined because a series is constant."""
