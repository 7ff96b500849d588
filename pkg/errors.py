"""
Error types shared by the solver toolkit.

Invalid input keeps the ``ValueError`` contract so callers that already catch
``ValueError`` keep working. Errors with structured fields rebuild from those fields
when unpickled, e.g. when raised inside a worker process.
"""

from typing import Optional


class InvalidInputError(ValueError):
    """Raised when an operation receives data that violates its preconditions."""


class ParseError(InvalidInputError):
    """Raised when a LIBSVM text stream cannot be parsed."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.detail = message
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)

    def __reduce__(self):
        return (ParseError, (self.detail, self.line_number))


class ConfigError(ValueError):
    """Raised when a run or verification configuration is rejected."""


class DivergenceError(ArithmeticError):
    """Raised when an iterate stops being finite."""

    def __init__(self, solver: str, epoch: int, inner_index: int):
        self.solver = solver
        self.epoch = epoch
        self.inner_index = inner_index
        super().__init__(
            f"{solver} diverged: non-finite iterate at epoch {epoch}, inner index {inner_index}"
        )

    def __reduce__(self):
        return (DivergenceError, (self.solver, self.epoch, self.inner_index))


class ConvergenceError(RuntimeError):
    """Raised when the reference minimizer hits its iteration cap."""

    def __init__(self, achieved_norm: float, tol: float, iterations: int):
        self.achieved_norm = achieved_norm
        self.tol = tol
        self.iterations = iterations
        super().__init__(
            f"Reference minimizer stopped after {iterations} iterations with "
            f"gradient norm {achieved_norm:.3e} > tolerance {tol:.3e}"
        )

    def __reduce__(self):
        return (ConvergenceError, (self.achieved_norm, self.tol, self.iterations))


class VerificationFailed(AssertionError):
    """Raised by verification commands when a checked property does not hold."""
