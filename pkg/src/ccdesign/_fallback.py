"""Pure numpy implementation of the jet kernel.

Mirrors the contract of the compiled extension ``ccdesign._native``: no
function raises on domain problems; each returns an int64 error triple
``(kind, op_index, point_index)`` with kind 0 on success.  Operations are
vectorized over the leading (points) axis; the coefficient recurrences run
as short Python loops since orders stay small (<= 12 in practice).
"""

from __future__ import annotations

import numpy as np

_LOG_TOL = 1e-300
_DIV_TOL = 1e-12
_EXP_MAX = 709.0

_OK = np.zeros(3, dtype=np.int64)


def _err(kind, op=-1, point=-1):
    return np.array([kind, op, point], dtype=np.int64)


def _first_bad(mask) -> int:
    return int(np.argmax(mask))


def jet_mul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, m = a.shape
    out = np.zeros_like(a)
    for k in range(m):
        acc = out[:, k]
        for j in range(k + 1):
            acc += a[:, j] * b[:, k - j]
    return out


def _div_into(a, b, out):
    """out = a / b as series; returns error kind (0 ok)."""
    m = a.shape[1]
    b0 = b[:, 0]
    bad = np.abs(b0) < _DIV_TOL
    if bad.any():
        return 2, _first_bad(bad)
    out[:, 0] = a[:, 0] / b0
    for k in range(1, m):
        acc = a[:, k].copy()
        for j in range(k):
            acc -= out[:, j] * b[:, k - j]
        out[:, k] = acc / b0
    return 0, -1


def jet_div(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = np.empty_like(a)
    kind, point = _div_into(a, b, out)
    if kind:
        return out, _err(kind, -1, point)
    return out, _OK


def _exp_into(a, out):
    a0 = a[:, 0]
    bad = a0 > _EXP_MAX
    if bad.any():
        return 4, _first_bad(bad)
    m = a.shape[1]
    out[:, 0] = np.exp(a0)
    for k in range(1, m):
        acc = np.zeros(a.shape[0])
        for j in range(1, k + 1):
            acc += j * a[:, j] * out[:, k - j]
        out[:, k] = acc / k
    return 0, -1


def jet_exp(a):
    a = np.asarray(a, dtype=np.float64)
    out = np.empty_like(a)
    kind, point = _exp_into(a, out)
    if kind:
        return out, _err(kind, -1, point)
    return out, _OK


def _log_into(a, out):
    a0 = a[:, 0]
    bad = a0 <= _LOG_TOL
    if bad.any():
        return 1, _first_bad(bad)
    m = a.shape[1]
    out[:, 0] = np.log(a0)
    for k in range(1, m):
        acc = a[:, k].copy()
        for j in range(1, k):
            acc -= (j / k) * out[:, j] * a[:, k - j]
        out[:, k] = acc / a0
    return 0, -1


def jet_log(a):
    a = np.asarray(a, dtype=np.float64)
    out = np.empty_like(a)
    kind, point = _log_into(a, out)
    if kind:
        return out, _err(kind, -1, point)
    return out, _OK


def _pow_real_into(a, r, out):
    a0 = a[:, 0]
    bad = a0 <= _LOG_TOL
    if bad.any():
        return 3, _first_bad(bad)
    m = a.shape[1]
    out[:, 0] = a0**r
    for k in range(1, m):
        acc = np.zeros(a.shape[0])
        for j in range(1, k + 1):
            acc += ((r + 1.0) * j - k) * a[:, j] * out[:, k - j]
        out[:, k] = acc / (k * a0)
    return 0, -1


def jet_pow_real(a, r):
    a = np.asarray(a, dtype=np.float64)
    out = np.empty_like(a)
    kind, point = _pow_real_into(a, float(r), out)
    if kind:
        return out, _err(kind, -1, point)
    return out, _OK


def jet_pow_int(a, p):
    a = np.asarray(a, dtype=np.float64)
    p = int(p)
    n, m = a.shape
    if p == 0:
        out = np.zeros_like(a)
        out[:, 0] = 1.0
        return out, _OK
    negative = p < 0
    p = abs(p)
    acc = None
    base = a
    while p:
        if p & 1:
            acc = base.copy() if acc is None else jet_mul(acc, base)
        p >>= 1
        if p:
            base = jet_mul(base, base)
    if negative:
        one = np.zeros_like(a)
        one[:, 0] = 1.0
        out = np.empty_like(a)
        kind, point = _div_into(one, acc, out)
        if kind:
            return out, _err(kind, -1, point)
        return out, _OK
    return acc, _OK


def jet_deriv(a):
    a = np.asarray(a, dtype=np.float64)
    n, m = a.shape
    out = np.empty((n, m - 1), dtype=np.float64)
    for j in range(m - 1):
        out[:, j] = (j + 1) * a[:, j + 1]
    return out


def run_tape(code, args, consts, theta, points, order, max_depth):
    n = points.shape[0]
    m = order + 1
    stack = np.zeros((max_depth, n, m), dtype=np.float64)
    sp = 0
    for idx in range(code.shape[0]):
        op = int(code[idx])
        arg = int(args[idx])
        if op == 0:  # const
            stack[sp, :, :] = 0.0
            stack[sp, :, 0] = consts[arg]
            sp += 1
        elif op == 1:  # param
            stack[sp, :, :] = 0.0
            stack[sp, :, 0] = theta[arg]
            sp += 1
        elif op == 2:  # var
            stack[sp, :, :] = 0.0
            stack[sp, :, 0] = points
            if m > 1:
                stack[sp, :, 1] = 1.0
            sp += 1
        elif op == 3:
            stack[sp - 2] += stack[sp - 1]
            sp -= 1
        elif op == 4:
            stack[sp - 2] -= stack[sp - 1]
            sp -= 1
        elif op == 5:
            stack[sp - 2] = jet_mul(stack[sp - 2], stack[sp - 1])
            sp -= 1
        elif op == 6:
            out = np.empty((n, m))
            kind, point = _div_into(stack[sp - 2], stack[sp - 1], out)
            if kind:
                return stack[0], _err(kind, idx, point)
            stack[sp - 2] = out
            sp -= 1
        elif op == 7:
            stack[sp - 1] = -stack[sp - 1]
        elif op == 8:
            out = np.empty((n, m))
            kind, point = _exp_into(stack[sp - 1], out)
            if kind:
                return stack[0], _err(kind, idx, point)
            stack[sp - 1] = out
        elif op == 9:
            out = np.empty((n, m))
            kind, point = _log_into(stack[sp - 1], out)
            if kind:
                return stack[0], _err(kind, idx, point)
            stack[sp - 1] = out
        elif op == 10:
            expo = stack[sp - 1]
            if m > 1 and np.any(np.abs(expo[:, 1:]) > 0.0):
                return stack[0], _err(6, idx, 0)
            r = float(expo[0, 0])
            base = stack[sp - 2]
            if abs(r - round(r)) <= 1e-12 and abs(r) < 2**31:
                out, err = jet_pow_int(base, int(round(r)))
            else:
                out = np.empty((n, m))
                kind, point = _pow_real_into(base, r, out)
                err = _err(kind, idx, point) if kind else _OK
            if err[0]:
                return stack[0], np.array([err[0], idx, err[2]], dtype=np.int64)
            stack[sp - 2] = out
            sp -= 1
        else:
            return stack[0], _err(5, idx, 0)
    return stack[0].copy(), _OK
