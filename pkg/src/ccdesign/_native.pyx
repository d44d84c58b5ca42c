# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementation of the jet kernel (see ccdesign._fallback for the
reference semantics; the two backends are interchangeable)."""

import numpy as np

cimport cython
from libc.math cimport exp as c_exp, log as c_log, pow as c_pow, fabs, llround, isfinite

cdef double LOG_TOL = 1e-300
cdef double DIV_TOL = 1e-12
cdef double EXP_MAX = 709.0


cdef inline void _conv_mul(double[:, ::1] a, double[:, ::1] b, double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t n = a.shape[0], m = a.shape[1], i, k, j
    cdef double acc
    for i in range(n):
        for k in range(m):
            acc = 0.0
            for j in range(k + 1):
                acc += a[i, j] * b[i, k - j]
            out[i, k] = acc


cdef inline Py_ssize_t _conv_div(double[:, ::1] a, double[:, ::1] b, double[:, ::1] out) noexcept nogil:
    # returns -1 on success, else offending point index
    cdef Py_ssize_t n = a.shape[0], m = a.shape[1], i, k, j
    cdef double acc, b0
    for i in range(n):
        b0 = b[i, 0]
        if fabs(b0) < DIV_TOL:
            return i
        out[i, 0] = a[i, 0] / b0
        for k in range(1, m):
            acc = a[i, k]
            for j in range(k):
                acc -= out[i, j] * b[i, k - j]
            out[i, k] = acc / b0
    return -1


cdef inline Py_ssize_t _conv_exp(double[:, ::1] a, double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t n = a.shape[0], m = a.shape[1], i, k, j
    cdef double acc
    for i in range(n):
        if a[i, 0] > EXP_MAX:
            return i
        out[i, 0] = c_exp(a[i, 0])
        for k in range(1, m):
            acc = 0.0
            for j in range(1, k + 1):
                acc += j * a[i, j] * out[i, k - j]
            out[i, k] = acc / k
    return -1


cdef inline Py_ssize_t _conv_log(double[:, ::1] a, double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t n = a.shape[0], m = a.shape[1], i, k, j
    cdef double acc, a0
    for i in range(n):
        a0 = a[i, 0]
        if a0 <= LOG_TOL:
            return i
        out[i, 0] = c_log(a0)
        for k in range(1, m):
            acc = a[i, k]
            for j in range(1, k):
                acc -= (<double> j / k) * out[i, j] * a[i, k - j]
            out[i, k] = acc / a0
    return -1


cdef inline Py_ssize_t _conv_pow_real(double[:, ::1] a, double r, double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t n = a.shape[0], m = a.shape[1], i, k, j
    cdef double acc, a0
    for i in range(n):
        a0 = a[i, 0]
        if a0 <= LOG_TOL:
            return i
        out[i, 0] = c_pow(a0, r)
        for k in range(1, m):
            acc = 0.0
            for j in range(1, k + 1):
                acc += ((r + 1.0) * j - k) * a[i, j] * out[i, k - j]
            out[i, k] = acc / (k * a0)
    return -1


cdef inline Py_ssize_t _conv_pow_int(double[:, ::1] a, long long p,
                                     double[:, ::1] out, double[:, ::1] tmp) noexcept nogil:
    # out = a**p via repeated multiplication; tmp is scratch of the same shape.
    cdef Py_ssize_t n = a.shape[0], m = a.shape[1], i, k, t
    cdef long long q = p if p >= 0 else -p
    cdef Py_ssize_t bad
    for i in range(n):
        out[i, 0] = 1.0
        for k in range(1, m):
            out[i, k] = 0.0
    for t in range(q):
        _conv_mul(out, a, tmp)
        out[:, :] = tmp
    if p < 0:
        tmp[:, :] = out
        for i in range(n):
            out[i, 0] = 1.0
            for k in range(1, m):
                out[i, k] = 0.0
        # reuse a's shape: divide ones by tmp in place of out
        bad = _conv_div_ones(tmp, out)
        if bad >= 0:
            return bad
    return -1


cdef inline Py_ssize_t _conv_div_ones(double[:, ::1] b, double[:, ::1] out) noexcept nogil:
    # out currently holds the constant-one jet; replace with 1/b.
    cdef Py_ssize_t n = b.shape[0], m = b.shape[1], i, k, j
    cdef double acc, b0
    for i in range(n):
        b0 = b[i, 0]
        if fabs(b0) < DIV_TOL:
            return i
        out[i, 0] = 1.0 / b0
        for k in range(1, m):
            acc = 0.0
            for j in range(k):
                acc -= out[i, j] * b[i, k - j]
            out[i, k] = acc / b0
    return -1


def jet_mul(a, b):
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    out = np.empty_like(a)
    _conv_mul(a, b, out)
    return out


def jet_div(a, b):
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    out = np.empty_like(a)
    err = np.zeros(3, dtype=np.int64)
    cdef Py_ssize_t bad = _conv_div(a, b, out)
    if bad >= 0:
        err[0] = 2
        err[1] = -1
        err[2] = bad
    return out, err


def jet_exp(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    out = np.empty_like(a)
    err = np.zeros(3, dtype=np.int64)
    cdef Py_ssize_t bad = _conv_exp(a, out)
    if bad >= 0:
        err[0] = 4
        err[1] = -1
        err[2] = bad
    return out, err


def jet_log(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    out = np.empty_like(a)
    err = np.zeros(3, dtype=np.int64)
    cdef Py_ssize_t bad = _conv_log(a, out)
    if bad >= 0:
        err[0] = 1
        err[1] = -1
        err[2] = bad
    return out, err


def jet_pow_real(a, r):
    a = np.ascontiguousarray(a, dtype=np.float64)
    out = np.empty_like(a)
    err = np.zeros(3, dtype=np.int64)
    cdef Py_ssize_t bad = _conv_pow_real(a, float(r), out)
    if bad >= 0:
        err[0] = 3
        err[1] = -1
        err[2] = bad
    return out, err


def jet_pow_int(a, p):
    a = np.ascontiguousarray(a, dtype=np.float64)
    out = np.empty_like(a)
    tmp = np.empty_like(a)
    err = np.zeros(3, dtype=np.int64)
    cdef Py_ssize_t bad = _conv_pow_int(a, int(p), out, tmp)
    if bad >= 0:
        err[0] = 2
        err[1] = -1
        err[2] = bad
    return out, err


def jet_deriv(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    cdef Py_ssize_t n = a.shape[0], m = a.shape[1], i, j
    out = np.empty((n, m - 1), dtype=np.float64)
    cdef double[:, ::1] av = a
    cdef double[:, ::1] ov = out
    with nogil:
        for i in range(n):
            for j in range(m - 1):
                ov[i, j] = (j + 1) * av[i, j + 1]
    return out


@cython.boundscheck(False)
def run_tape(code, args, consts, theta, points, int order, int max_depth):
    cdef int[::1] code_v = np.ascontiguousarray(code, dtype=np.int32)
    cdef int[::1] args_v = np.ascontiguousarray(args, dtype=np.int32)
    cdef double[::1] consts_v = np.ascontiguousarray(consts, dtype=np.float64)
    cdef double[::1] theta_v = np.ascontiguousarray(theta, dtype=np.float64)
    cdef double[::1] pts = np.ascontiguousarray(points, dtype=np.float64)
    cdef Py_ssize_t n = pts.shape[0]
    cdef Py_ssize_t m = order + 1
    stack_arr = np.zeros((max_depth, n, m), dtype=np.float64)
    tmp_arr = np.empty((n, m), dtype=np.float64)
    tmp2_arr = np.empty((n, m), dtype=np.float64)
    err = np.zeros(3, dtype=np.int64)
    cdef double[:, :, ::1] stack = stack_arr
    cdef double[:, ::1] tmp = tmp_arr
    cdef double[:, ::1] tmp2 = tmp2_arr
    cdef Py_ssize_t sp = 0, idx, i, k, bad
    cdef int op, arg
    cdef double r
    cdef long long p
    cdef int kind = 0
    cdef Py_ssize_t nops = code_v.shape[0]
    cdef Py_ssize_t err_op = -1, err_point = -1

    with nogil:
        for idx in range(nops):
            op = code_v[idx]
            arg = args_v[idx]
            if op == 0 or op == 1:
                for i in range(n):
                    stack[sp, i, 0] = consts_v[arg] if op == 0 else theta_v[arg]
                    for k in range(1, m):
                        stack[sp, i, k] = 0.0
                sp += 1
            elif op == 2:
                for i in range(n):
                    stack[sp, i, 0] = pts[i]
                    for k in range(1, m):
                        stack[sp, i, k] = 1.0 if k == 1 else 0.0
                sp += 1
            elif op == 3:
                for i in range(n):
                    for k in range(m):
                        stack[sp - 2, i, k] += stack[sp - 1, i, k]
                sp -= 1
            elif op == 4:
                for i in range(n):
                    for k in range(m):
                        stack[sp - 2, i, k] -= stack[sp - 1, i, k]
                sp -= 1
            elif op == 5:
                _conv_mul(stack[sp - 2], stack[sp - 1], tmp)
                stack[sp - 2, :, :] = tmp
                sp -= 1
            elif op == 6:
                bad = _conv_div(stack[sp - 2], stack[sp - 1], tmp)
                if bad >= 0:
                    kind = 2
                    err_op = idx
                    err_point = bad
                    break
                stack[sp - 2, :, :] = tmp
                sp -= 1
            elif op == 7:
                for i in range(n):
                    for k in range(m):
                        stack[sp - 1, i, k] = -stack[sp - 1, i, k]
            elif op == 8:
                bad = _conv_exp(stack[sp - 1], tmp)
                if bad >= 0:
                    kind = 4
                    err_op = idx
                    err_point = bad
                    break
                stack[sp - 1, :, :] = tmp
            elif op == 9:
                bad = _conv_log(stack[sp - 1], tmp)
                if bad >= 0:
                    kind = 1
                    err_op = idx
                    err_point = bad
                    break
                stack[sp - 1, :, :] = tmp
            elif op == 10:
                kind = 0
                for i in range(n):
                    for k in range(1, m):
                        if stack[sp - 1, i, k] != 0.0:
                            kind = 6
                            break
                    if kind:
                        break
                if kind:
                    err_op = idx
                    err_point = 0
                    break
                r = stack[sp - 1, 0, 0]
                if fabs(r - llround(r)) <= 1e-12 and fabs(r) < 2147483648.0:
                    p = llround(r)
                    bad = _conv_pow_int(stack[sp - 2], p, tmp, tmp2)
                    if bad >= 0:
                        kind = 2
                        err_op = idx
                        err_point = bad
                        break
                else:
                    bad = _conv_pow_real(stack[sp - 2], r, tmp)
                    if bad >= 0:
                        kind = 3
                        err_op = idx
                        err_point = bad
                        break
                stack[sp - 2, :, :] = tmp
                sp -= 1
            else:
                kind = 5
                err_op = idx
                err_point = 0
                break

    if kind:
        err[0] = kind
        err[1] = err_op
        err[2] = err_point
        return stack_arr[0], err
    return stack_arr[0].copy(), err
