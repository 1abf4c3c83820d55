"""Exception hierarchy shared by all pipeline stages."""


class ReflmmError(Exception):
    """Base class for every error raised by this package."""


class DomainError(ReflmmError, ValueError):
    """An argument lies outside the domain of the operation."""


class DegenerateDirectionError(DomainError):
    pass


class BackFacingError(DomainError):
    pass


class GrazingError(DomainError):
    pass


class DimensionError(ReflmmError, ValueError):
    """Array shapes or coefficient lengths do not agree."""


class FormatError(ReflmmError):
    """A file on disk is malformed, truncated or of the wrong kind."""


class InsufficientObservationsError(ReflmmError):
    pass


class DarkEnvironmentError(DomainError):
    pass


class OptimizationError(ReflmmError, ArithmeticError):
    """An iterative solver produced a non-finite objective.

    ``trace`` holds the objective values recorded up to the failure.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []
