# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_pykernels``; same signatures and results."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()


def cox_partial_stats(time, event, X, beta, bint efron=True):
    cdef const double[::1] t = np.ascontiguousarray(time, dtype=np.float64)
    cdef const signed char[::1] e = np.ascontiguousarray(event, dtype=np.int8)
    cdef Py_ssize_t n = t.shape[0]
    Xa = np.ascontiguousarray(X, dtype=np.float64).reshape(n, -1)
    cdef const double[:, ::1] x = Xa
    cdef const double[::1] b = np.ascontiguousarray(beta, dtype=np.float64)
    cdef Py_ssize_t p = x.shape[1]

    grad_a = np.zeros(p)
    hess_a = np.zeros((p, p))
    cdef double[::1] grad = grad_a
    cdef double[:, ::1] hess = hess_a

    eta_a = Xa @ np.asarray(b)
    cdef double[::1] eta = eta_a
    cdef double shift = eta_a.max() if n > 0 else 0.0

    S1_a = np.zeros(p)
    S2_a = np.zeros((p, p))
    D1_a = np.zeros(p)
    D2_a = np.zeros((p, p))
    XS_a = np.zeros(p)
    m1_a = np.zeros(p)
    cdef double[::1] S1 = S1_a, D1 = D1_a, XS = XS_a, m1 = m1_a
    cdef double[:, ::1] S2 = S2_a, D2 = D2_a

    cdef double S0 = 0.0, D0 = 0.0, w, frac, den, loglik = 0.0, tcur
    cdef Py_ssize_t i, lo, hi, a, c, r, d
    with nogil:
        hi = n
        while hi > 0:
            tcur = t[hi - 1]
            lo = hi - 1
            while lo > 0 and t[lo - 1] == tcur:
                lo -= 1
            D0 = 0.0
            d = 0
            for a in range(p):
                D1[a] = 0.0
                XS[a] = 0.0
                for c in range(p):
                    D2[a, c] = 0.0
            for i in range(lo, hi):
                w = exp(eta[i] - shift)
                S0 += w
                for a in range(p):
                    S1[a] += w * x[i, a]
                    for c in range(p):
                        S2[a, c] += w * x[i, a] * x[i, c]
                if e[i]:
                    d += 1
                    D0 += w
                    loglik += eta[i]
                    for a in range(p):
                        D1[a] += w * x[i, a]
                        XS[a] += x[i, a]
                        for c in range(p):
                            D2[a, c] += w * x[i, a] * x[i, c]
            for r in range(d):
                frac = (<double> r) / d if efron else 0.0
                den = S0 - frac * D0
                loglik -= log(den) + shift
                for a in range(p):
                    m1[a] = (S1[a] - frac * D1[a]) / den
                    grad[a] -= m1[a]
                for a in range(p):
                    for c in range(p):
                        hess[a, c] -= (S2[a, c] - frac * D2[a, c]) / den - m1[a] * m1[c]
            for a in range(p):
                grad[a] += XS[a]
            hi = lo
    return loglik, grad_a, hess_a


def breslow_increments(time, event, eta):
    cdef const double[::1] t = np.ascontiguousarray(time, dtype=np.float64)
    cdef const signed char[::1] e = np.ascontiguousarray(event, dtype=np.int8)
    cdef const double[::1] et = np.ascontiguousarray(eta, dtype=np.float64)
    cdef Py_ssize_t n = t.shape[0]
    times_a = np.empty(n)
    inc_a = np.empty(n)
    cdef double[::1] times = times_a, inc = inc_a
    cdef double S0 = 0.0, tcur
    cdef Py_ssize_t lo, hi, i, d, m = 0
    with nogil:
        hi = n
        while hi > 0:
            tcur = t[hi - 1]
            lo = hi - 1
            while lo > 0 and t[lo - 1] == tcur:
                lo -= 1
            d = 0
            for i in range(lo, hi):
                S0 += exp(et[i])
                d += e[i]
            if d > 0:
                times[m] = tcur
                inc[m] = d / S0
                m += 1
            hi = lo
    return times_a[:m][::-1].copy(), inc_a[:m][::-1].copy()


def tabulate(time, event, group, Py_ssize_t n_groups, starts, ends):
    cdef const double[::1] t = np.ascontiguousarray(time, dtype=np.float64)
    cdef const signed char[::1] e = np.ascontiguousarray(event, dtype=np.int8)
    cdef const long long[::1] g = np.ascontiguousarray(group, dtype=np.int64)
    cdef const double[::1] s = np.ascontiguousarray(starts, dtype=np.float64)
    cdef const double[::1] f = np.ascontiguousarray(ends, dtype=np.float64)
    cdef Py_ssize_t n = t.shape[0], m = s.shape[0], i, w
    events_a = np.zeros((n_groups, m), dtype=np.int64)
    ptime_a = np.zeros((n_groups, m), dtype=np.float64)
    cdef long long[:, ::1] events = events_a
    cdef double[:, ::1] ptime = ptime_a
    cdef double ti, upper
    with nogil:
        for i in range(n):
            ti = t[i]
            for w in range(m):
                if ti <= s[w]:
                    break
                upper = ti if ti < f[w] else f[w]
                ptime[g[i], w] += upper - s[w]
                if e[i] and ti <= f[w]:
                    events[g[i], w] += 1
    return events_a, ptime_a
