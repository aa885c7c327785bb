"""Exception types shared across the package."""


class InputError(ValueError):
    """Malformed or non-finite input."""


class PreconditionError(ValueError):
    """An operation was called outside its domain of definition."""


class DomainError(ValueError):
    """A potential was evaluated inside the hard core."""


class ConvergenceError(RuntimeError):
    """The constraint projection did not reach feasibility."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (worst residual {residual:.3e})")
        self.residual = residual


class InvariantViolation(RuntimeError):
    """A runtime invariant check failed."""
