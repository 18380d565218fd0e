"""Exception hierarchy shared by all modules."""


class TransportError(Exception):
    """Base class for every error raised by this package."""


class InvalidPoint(TransportError, ValueError):
    pass


class AntipodalPoints(TransportError, ValueError):
    """Minimizing geodesic between two sphere points is not unique."""


class BaseMismatch(TransportError, ValueError):
    pass


class ManifoldMismatch(TransportError, ValueError):
    pass


class DimensionMismatch(TransportError, ValueError):
    pass


class InvalidMeasure(TransportError, ValueError):
    pass


class InfeasibleWeights(TransportError, ValueError):
    """Total masses of the two marginals differ."""


class NonOptimalPlan(TransportError, ValueError):
    pass


class SourceMismatch(TransportError, ValueError):
    pass


class SolverFailure(TransportError, RuntimeError):
    pass


class ParameterOutOfRange(TransportError, ValueError):
    pass


class NegativeF(TransportError, ValueError):
    pass


class NoConvergence(TransportError, RuntimeError):
    """Refinement budget exhausted before the requested tolerance was met.

    The partial refinement trace is kept on ``trace``.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []


class NotInterior(TransportError, ValueError):
    pass


class SegmentNotOptimal(TransportError, ValueError):
    pass


class AssumptionViolation(TransportError, RuntimeError):
    """A numerically probed hypothesis failed for this instance."""

    def __init__(self, message, details=None):
        super().__init__(message)
        self.details = details or {}
