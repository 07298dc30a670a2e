# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled segment pooling over contiguous class groups."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def segment_sum(const double[:, ::1] P, const cnp.int64_t[::1] starts):
    cdef Py_ssize_t n = P.shape[0], C = P.shape[1], G = starts.shape[0]
    out = np.zeros((n, G), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, g, k, stop
    cdef double acc
    for i in range(n):
        for g in range(G):
            stop = starts[g + 1] if g + 1 < G else C
            acc = 0.0
            for k in range(starts[g], stop):
                acc += P[i, k]
            o[i, g] = acc
    return out


def segment_max(const double[:, ::1] P, const cnp.int64_t[::1] starts):
    cdef Py_ssize_t n = P.shape[0], C = P.shape[1], G = starts.shape[0]
    vals = np.empty((n, G), dtype=np.float64)
    args = np.empty((n, G), dtype=np.int64)
    cdef double[:, ::1] v = vals
    cdef cnp.int64_t[:, ::1] a = args
    cdef Py_ssize_t i, g, k, stop, best
    cdef double m
    for i in range(n):
        for g in range(G):
            stop = starts[g + 1] if g + 1 < G else C
            best = starts[g]
            m = P[i, best]
            for k in range(best + 1, stop):
                if P[i, k] > m:
                    m = P[i, k]
                    best = k
            v[i, g] = m
            a[i, g] = best
    return vals, args


def range_consistent(const double[:, ::1] P, const cnp.int64_t[::1] starts, int use_max):
    """Flag rows whose fine argmax lies inside the argmax coarse group."""
    cdef Py_ssize_t n = P.shape[0], C = P.shape[1], G = starts.shape[0]
    out = np.empty(n, dtype=np.bool_)
    cdef cnp.npy_bool[::1] o = out
    cdef Py_ssize_t i, g, k, stop, u, ug, vg
    cdef double fmax, s, best
    for i in range(n):
        u = 0
        fmax = P[i, 0]
        for k in range(1, C):
            if P[i, k] > fmax:
                fmax = P[i, k]
                u = k
        vg = -1
        ug = -1
        best = 0.0
        for g in range(G):
            stop = starts[g + 1] if g + 1 < G else C
            if use_max:
                s = P[i, starts[g]]
                for k in range(starts[g] + 1, stop):
                    if P[i, k] > s:
                        s = P[i, k]
            else:
                s = 0.0
                for k in range(starts[g], stop):
                    s += P[i, k]
            if vg < 0 or s > best:
                best = s
                vg = g
            if starts[g] <= u < stop:
                ug = g
        o[i] = vg == ug
    return out


from libc.math cimport exp, log


def segment_softmax_ce(const double[:, ::1] Z, const cnp.int64_t[::1] offsets,
                       const double[:, ::1] target, const double[::1] weight, double log_eps):
    """Summed per-segment mean cross-entropy and its logit gradient.

    Segment ``k`` spans columns ``offsets[k]:offsets[k + 1]``; each is an
    independent softmax. Log-probabilities are clamped at ``log_eps`` and
    clamped entries carry no gradient.
    """
    cdef Py_ssize_t n = Z.shape[0], C = Z.shape[1], S = offsets.shape[0] - 1
    dZ = np.empty((n, C), dtype=np.float64)
    cdef double[:, ::1] d = dZ
    cdef Py_ssize_t i, s, k, a, b
    cdef double m, acc, lse, ls, tsum, w, total = 0.0, row
    cdef double inv_n = 1.0 / n
    for i in range(n):
        w = weight[i]
        for s in range(S):
            a = offsets[s]
            b = offsets[s + 1]
            m = Z[i, a]
            for k in range(a + 1, b):
                if Z[i, k] > m:
                    m = Z[i, k]
            acc = 0.0
            for k in range(a, b):
                d[i, k] = exp(Z[i, k] - m)
                acc += d[i, k]
            lse = m + log(acc)
            tsum = 0.0
            row = 0.0
            for k in range(a, b):
                ls = Z[i, k] - lse
                if ls > log_eps:
                    row += target[i, k] * ls
                    tsum += target[i, k]
            for k in range(a, b):
                if Z[i, k] - lse > log_eps:
                    d[i, k] = w * inv_n * (d[i, k] / acc * tsum - target[i, k])
                else:
                    row += target[i, k] * log_eps
                    d[i, k] = w * inv_n * d[i, k] / acc * tsum
            total -= w * row
    return total * inv_n, dZ
