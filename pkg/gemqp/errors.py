"""
Exception hierarchy shared by every module.

Each error carries the process exit code the command-line front-end
reports for it (0 success, 1 input/usage error, 2 solver non-convergence).
"""

from typing import Any, Optional


class GemQPError(Exception):
    exit_code = 1


class ContractViolation(GemQPError, ValueError):
    """Shape mismatch or a violated precondition."""


class InputError(GemQPError, ValueError):
    """Non-finite numbers in problem data."""


class NotPositiveDefinite(GemQPError, ValueError):
    def __init__(self, detail: str = ""):
        message = "C not positive definite"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)


class CertificatePreconditionError(ContractViolation):
    """A duality-gap certificate was requested for an infeasible pair."""

    def __init__(self, kind: str, index: int, value: float):
        self.kind = kind
        self.index = index
        self.value = value
        if kind == "dual":
            message = f"dual multiplier v[{index}] = {value!r} is negative"
        else:
            message = f"primal constraint {index} violated: (Az - b)[{index}] = {value!r}"
        super().__init__(message)


class SizeError(ContractViolation):
    pass


class ParameterError(GemQPError, ValueError):
    pass


class InternalConsistencyError(GemQPError, RuntimeError):
    pass


class SolverNotConverged(GemQPError, RuntimeError):
    """Raised with the partial result attached so callers can still report it."""

    exit_code = 2

    def __init__(self, message: str, partial: Optional[Any] = None):
        super().__init__(message)
        self.partial = partial
