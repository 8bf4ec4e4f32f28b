"""Exception types raised across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition."""


class InfeasibleRateError(ValueError):
    """The requested information rate cannot be met by the alphabet."""


class ConvergenceError(RuntimeError):
    """The solver stopped before reaching its tolerances.

    The best iterate found is attached as ``solution``.
    """

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class DegenerateContextError(ValueError):
    """A transition row has no symbol with positive probability."""


class DegenerateIntervalError(ValueError):
    """Refinement selected a zero-width subinterval."""


class TruncatedFrameError(ValueError):
    """A frame ran out of symbols before all source bits were recovered."""


class MalformedFrameError(ValueError):
    """A serialized frame does not follow the wire format."""
