"""Taylor-jet kernel: opcode definitions, backend selection and raising wrappers.

Truncated Taylor series ("jets") are stored as float64 arrays of shape
``(n_points, order + 1)``; entry ``[i, j]`` is the j-th Taylor coefficient
(derivative over j!) at expansion point i.  The hot loops — postfix tape
evaluation and the jet primitives used by the table recursion — live in a
compiled extension (``ccdesign._native``, built from Cython) with a pure
numpy fallback (``ccdesign._fallback``).  The backend is chosen once at
import; set ``CCD_KERNEL=python`` to force the fallback.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import EvalDomainError

OP_CONST = 0
OP_PARAM = 1
OP_VAR = 2
OP_ADD = 3
OP_SUB = 4
OP_MUL = 5
OP_DIV = 6
OP_NEG = 7
OP_EXP = 8
OP_LOG = 9
OP_POW = 10

STACK_EFFECT = {
    OP_CONST: 1,
    OP_PARAM: 1,
    OP_VAR: 1,
    OP_ADD: -1,
    OP_SUB: -1,
    OP_MUL: -1,
    OP_DIV: -1,
    OP_NEG: 0,
    OP_EXP: 0,
    OP_LOG: 0,
    OP_POW: -1,
}

# Division by a jet whose constant term is below this magnitude is an error,
# never an Inf: downstream quotient tables require root-free denominators.
DIV_TOL = 1e-12

_ERR_MESSAGES = {
    1: "log of non-positive value",
    2: "division by (near-)zero denominator",
    3: "non-integer power of non-positive base",
    4: "overflow or non-finite result",
    5: "stack underflow (malformed tape)",
    6: "power exponent depends on the variable",
}


@dataclass(frozen=True)
class Tape:
    """Postfix program produced by :func:`ccdesign.expressions.compile_tape`."""

    code: tuple[int, ...]
    args: tuple[int, ...]
    consts: tuple[float, ...]
    param_names: tuple[str, ...]
    max_depth: int
    source: str

    def arrays(self):
        return (
            np.asarray(self.code, dtype=np.int32),
            np.asarray(self.args, dtype=np.int32),
            np.asarray(self.consts, dtype=np.float64),
        )


def _select_backend():
    forced = os.environ.get("CCD_KERNEL", "").strip().lower()
    if forced not in ("", "native", "python"):
        raise ValueError(f"CCD_KERNEL must be 'native' or 'python', got {forced!r}")
    if forced != "python":
        try:
            from . import _native as impl  # compiled extension

            return impl, "native"
        except ImportError:
            if forced == "native":
                raise
    from . import _fallback as impl

    return impl, "python"


_impl, BACKEND = _select_backend()


def backend_name() -> str:
    return BACKEND


def _raise_if(err, context: str = ""):
    kind = int(err[0])
    if kind == 0:
        return
    message = _ERR_MESSAGES.get(kind, f"kernel error {kind}")
    where = f" at op {int(err[1])}, point index {int(err[2])}" if int(err[1]) >= 0 else ""
    prefix = f"{context}: " if context else ""
    raise EvalDomainError(f"{prefix}{message}{where}")


def run_tape(tape: Tape, theta: np.ndarray, points: np.ndarray, order: int) -> np.ndarray:
    """Evaluate a tape as order-``order`` jets at every point.

    Returns an array of shape ``(len(points), order + 1)``.
    """
    if order < 0:
        raise ValueError("order must be >= 0")
    code, args, consts = tape.arrays()
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    points = np.ascontiguousarray(points, dtype=np.float64)
    out, err = _impl.run_tape(code, args, consts, theta, points, order, tape.max_depth)
    _raise_if(err, tape.source)
    if not np.all(np.isfinite(out)):
        bad = int(np.argwhere(~np.isfinite(out))[0][0])
        raise EvalDomainError(f"{tape.source}: non-finite result at point index {bad}")
    return out


def jet_mul(a, b):
    return _impl.jet_mul(a, b)


def jet_div(a, b):
    out, err = _impl.jet_div(a, b)
    _raise_if(err, "jet division")
    return out


def jet_exp(a):
    out, err = _impl.jet_exp(a)
    _raise_if(err, "jet exp")
    return out


def jet_log(a):
    out, err = _impl.jet_log(a)
    _raise_if(err, "jet log")
    return out


def jet_pow(a, exponent: float):
    """Real or integer power; integer exponents allow non-positive bases."""
    r = float(exponent)
    if abs(r - round(r)) <= 1e-12 and abs(r) < 2**31:
        out, err = _impl.jet_pow_int(a, int(round(r)))
    else:
        out, err = _impl.jet_pow_real(a, r)
    _raise_if(err, "jet power")
    return out


def jet_deriv(a):
    """Series of the derivative: drops one order."""
    return _impl.jet_deriv(np.ascontiguousarray(a))
