"""Jets (truncated Taylor series) and expression evaluation.

A :class:`Jet` of order k at an expansion point holds k+1 coefficients;
coefficient ``j`` equals the j-th derivative over j!.  All arithmetic is
forward-mode truncated Taylor arithmetic delegated to the kernel backend,
so derivative information propagates through quotients and compositions
without symbolic expression swell.
"""

from __future__ import annotations

import math
from typing import Mapping

import numpy as np

from . import kernel
from .errors import ExpressionError
from .expressions import Expr, compile_tape, free_params


class Jet:
    """Immutable truncated Taylor series at a single expansion point."""

    __slots__ = ("coef",)

    def __init__(self, coefficients):
        coef = np.array(coefficients, dtype=np.float64)
        if coef.ndim != 1 or coef.size == 0:
            raise ValueError("jet coefficients must be a non-empty 1-d array")
        coef.setflags(write=False)
        object.__setattr__(self, "coef", coef)

    def __setattr__(self, name, value):
        raise AttributeError("Jet is immutable")

    @classmethod
    def variable(cls, value: float, order: int) -> "Jet":
        coef = np.zeros(order + 1)
        coef[0] = value
        if order >= 1:
            coef[1] = 1.0
        return cls(coef)

    @classmethod
    def constant(cls, value: float, order: int) -> "Jet":
        coef = np.zeros(order + 1)
        coef[0] = value
        return cls(coef)

    @property
    def order(self) -> int:
        return self.coef.size - 1

    @property
    def value(self) -> float:
        return float(self.coef[0])

    def derivative(self, j: int) -> float:
        """j-th derivative of the represented function at the expansion point."""
        return float(self.coef[j] * math.factorial(j))

    def _coerce(self, other) -> "Jet":
        if isinstance(other, Jet):
            if other.order != self.order:
                raise ValueError(
                    f"jet order mismatch: {self.order} vs {other.order}"
                )
            return other
        if isinstance(other, (int, float)):
            return Jet.constant(float(other), self.order)
        return NotImplemented

    def _row(self):
        return self.coef.reshape(1, -1)

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return Jet(self.coef + other.coef)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return Jet(self.coef - other.coef)

    def __rsub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return Jet(other.coef - self.coef)

    def __neg__(self):
        return Jet(-self.coef)

    def __mul__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return Jet(kernel.jet_mul(self._row(), other._row())[0])

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return Jet(kernel.jet_div(self._row(), other._row())[0])

    def __rtruediv__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return Jet(kernel.jet_div(other._row(), self._row())[0])

    def __pow__(self, exponent: float):
        return Jet(kernel.jet_pow(self._row(), exponent)[0])

    def exp(self) -> "Jet":
        return Jet(kernel.jet_exp(self._row())[0])

    def log(self) -> "Jet":
        return Jet(kernel.jet_log(self._row())[0])

    def deriv(self) -> "Jet":
        """Jet of the derivative function (one order lower)."""
        if self.order == 0:
            raise ValueError("cannot differentiate an order-0 jet")
        return Jet(kernel.jet_deriv(self._row())[0])

    def __repr__(self):
        return f"Jet({self.coef.tolist()})"

    def __eq__(self, other):
        return isinstance(other, Jet) and np.array_equal(self.coef, other.coef)

    def __hash__(self):
        return hash(self.coef.tobytes())


def _theta_vector(expr: Expr, theta: Mapping[str, float]):
    names = tuple(sorted(theta))
    missing = free_params(expr) - set(names)
    if missing:
        raise ExpressionError(f"missing parameter values: {sorted(missing)}")
    return names, np.array([float(theta[n]) for n in names])


def eval_series(expr: Expr, points, order: int, theta: Mapping[str, float] | None = None):
    """Jets of ``expr`` at every point: array of shape ``(len(points), order+1)``."""
    names, vec = _theta_vector(expr, theta or {})
    tape = compile_tape(expr, names)
    pts = np.atleast_1d(np.asarray(points, dtype=np.float64))
    return kernel.run_tape(tape, vec, pts, order)


def eval_values(expr: Expr, points, theta: Mapping[str, float] | None = None):
    """Plain values of ``expr`` on an array of points."""
    return eval_series(expr, points, 0, theta)[:, 0]


def eval_jet(expr: Expr, at: float, order: int, theta: Mapping[str, float] | None = None) -> Jet:
    """Evaluate ``expr`` as an order-``order`` jet at a single point."""
    return Jet(eval_series(expr, [at], order, theta)[0])
