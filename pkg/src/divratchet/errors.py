"""Exception types shared across the solver, simulator and CLI."""


class ParameterError(ValueError):
    """Model or configuration parameters outside their admissible domain."""


class ConvergenceError(RuntimeError):
    """An iterative solve hit its iteration cap."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class CascadeError(ConvergenceError):
    """A level of the obstacle cascade failed to converge."""

    def __init__(self, message, level, residual=float("nan"), iterations=0):
        super().__init__(message, residual, iterations)
        self.level = level


class ConsistencyError(RuntimeError):
    """A computed solution violates a structural invariant beyond tolerance."""


class TruncationError(RuntimeError):
    """A free boundary did not close before the right end of the grid."""
