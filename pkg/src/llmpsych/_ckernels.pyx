# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Signatures mirror :mod:`llmpsych._pykernels`."""
import numpy as np
from libc.math cimport atan2, cos, sin
from libc.stdint cimport int64_t


cdef double _criterion(double[:, ::1] B) nogil:
    cdef Py_ssize_t p = B.shape[0], k = B.shape[1], i, j
    cdef double s2, s4, b2, total = 0.0
    for j in range(k):
        s2 = 0.0
        s4 = 0.0
        for i in range(p):
            b2 = B[i, j] * B[i, j]
            s2 += b2
            s4 += b2 * b2
        total += s4 / p - (s2 / p) * (s2 / p)
    return total


cdef void _rotate_pair(double[:, ::1] M, Py_ssize_t a, Py_ssize_t b,
                       double c, double s) nogil:
    cdef Py_ssize_t i
    cdef double x, y
    for i in range(M.shape[0]):
        x = M[i, a]
        y = M[i, b]
        M[i, a] = c * x + s * y
        M[i, b] = -s * x + c * y


def varimax_criterion(B):
    cdef double[:, ::1] Bv = np.ascontiguousarray(B, dtype=np.float64)
    return _criterion(Bv)


def varimax_sweeps(L, double tol=1e-8, int max_sweeps=1000):
    cdef double[:, ::1] B = np.array(L, dtype=np.float64, order="C", copy=True)
    cdef Py_ssize_t p = B.shape[0], k = B.shape[1]
    R_arr = np.eye(k)
    cdef double[:, ::1] R = R_arr
    cdef Py_ssize_t a, b, i
    cdef double x, y, u, v, su, sv, suu, suv, num, den, phi, prev, cur
    cdef int sweep
    cdef bint converged = False
    history = [_criterion(B)]
    prev = history[0]
    for sweep in range(max_sweeps):
        with nogil:
            for a in range(k - 1):
                for b in range(a + 1, k):
                    su = 0.0
                    sv = 0.0
                    suu = 0.0
                    suv = 0.0
                    for i in range(p):
                        x = B[i, a]
                        y = B[i, b]
                        u = x * x - y * y
                        v = 2.0 * x * y
                        su += u
                        sv += v
                        suu += u * u - v * v
                        suv += u * v
                    num = 2.0 * suv - 2.0 * su * sv / p
                    den = suu - (su * su - sv * sv) / p
                    phi = atan2(num, den) / 4.0
                    if phi != 0.0:
                        _rotate_pair(B, a, b, cos(phi), sin(phi))
                        _rotate_pair(R, a, b, cos(phi), sin(phi))
            cur = _criterion(B)
        history.append(cur)
        if cur - prev < tol:
            converged = True
            break
        prev = cur
    return np.asarray(B), R_arr, history, converged


def key_correct(raw, false_key, int lo, int hi, int neutral):
    cdef const int64_t[:, ::1] X = np.ascontiguousarray(raw, dtype=np.int64)
    cdef const signed char[::1] fk = np.ascontiguousarray(false_key, dtype=np.int8)
    cdef Py_ssize_t n = X.shape[0], m = X.shape[1], r, c
    out_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef int64_t s
    cdef int64_t flip = lo + hi
    with nogil:
        for r in range(n):
            for c in range(m):
                s = X[r, c]
                if s < lo or s > hi:
                    s = neutral
                out[r, c] = (flip - s) if fk[c] else s
    return out_arr


def agree_bias_rows(raw, false_key, int lo, int hi, int neutral):
    cdef const int64_t[:, ::1] X = np.ascontiguousarray(raw, dtype=np.int64)
    cdef const signed char[::1] fk = np.ascontiguousarray(false_key, dtype=np.int8)
    cdef Py_ssize_t n = X.shape[0], m = X.shape[1], r, c
    cdef Py_ssize_t n_false = 0
    for c in range(m):
        if fk[c]:
            n_false += 1
    if n_false == 0 or n_false == m:
        raise ValueError("agree bias needs both true-key and false-key items")
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef int64_t s
    cdef int64_t flip = lo + hi
    cdef double st, sf
    with nogil:
        for r in range(n):
            st = 0.0
            sf = 0.0
            for c in range(m):
                s = X[r, c]
                if s < lo or s > hi:
                    s = neutral
                if fk[c]:
                    sf += flip - s
                else:
                    st += s
            out[r] = st / (m - n_false) - sf / n_false
    return out_arr
