# flowfront/errors.py
from __future__ import annotations

from typing import List, Optional


class FlowFrontError(Exception):
    """Root of every error raised on purpose by flowfront."""


class ConfigError(FlowFrontError, ValueError):
    """Config document or input file failed validation.

    `problems` holds one "<json-pointer>: <message>" line per failure.
    """

    def __init__(self, message: str, problems: Optional[List[str]] = None):
        self.problems = list(problems or [])
        detail = "\n".join(self.problems)
        super().__init__(f"{message}\n{detail}" if detail else message)


class NumericalError(FlowFrontError, ArithmeticError):
    pass


class SolverConvergenceError(NumericalError):
    def __init__(self, message: str, residual: float):
        self.residual = float(residual)
        super().__init__(f"{message} (residual={self.residual:.3e})")


class BoundViolationError(NumericalError):
    def __init__(self, message: str, excess: float):
        self.excess = float(excess)
        super().__init__(f"{message} (excess={self.excess:.3e})")
