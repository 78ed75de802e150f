"""Exception types shared across the package."""


class ContractError(ValueError):
    """An argument violates a documented shape or range contract."""


class DomainError(ValueError):
    """A numeric input lies outside the function's domain (NaN, inf, ...)."""


class DivergenceError(ArithmeticError):
    """Training produced non-finite values.

    ``epoch`` and ``batch`` identify where it happened when known.
    """

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class SolverError(RuntimeError):
    """The LP solver did not reach an optimal basis when one was required."""
