"""Exception types shared across the package."""

from __future__ import annotations


class CCDesignError(Exception):
    """Base class for errors raised by this package."""


class ExpressionError(CCDesignError, ValueError):
    """Malformed expression text or an AST that violates grammar constraints.

    ``position`` is the 0-based offset into the source text, when known.
    """

    def __init__(self, message: str, position: int | None = None, source: str | None = None):
        self.position = position
        self.source = source
        if position is not None:
            message = f"{message} (position {position})"
        super().__init__(message)


class EvalDomainError(CCDesignError, ArithmeticError):
    """Evaluation left the expression's domain (log of a non-positive value,
    division by ~0, non-positive base under a real power, overflow)."""


class ModelError(CCDesignError, ValueError):
    """Invalid model definition or parameter assignment."""


class NumericalFailure(CCDesignError, RuntimeError):
    """A solver did not converge; carries the best residual seen."""

    def __init__(self, message: str, best_residual: float | None = None):
        self.best_residual = best_residual
        super().__init__(message)
