# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled pair-counting kernel for the degree-of-agreement metric.

Each student's right and wrong answers are packed into 64-bit masks, so the
per-pair count over exercises reduces to a few popcounts, and every
unordered pair is visited once.
"""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t

cnp.import_array()


cdef extern from *:
    """
    static inline int dualcd_popcount(unsigned long long x) { return __builtin_popcountll(x); }
    """
    int dualcd_popcount(unsigned long long x) nogil


def _pack(signed char[:, ::1] r, int code, Py_ssize_t words):
    cdef Py_ssize_t n = r.shape[0], m = r.shape[1], i, j
    out_arr = np.zeros((n, words), dtype=np.uint64)
    cdef uint64_t[:, ::1] out = out_arr
    for i in range(n):
        for j in range(m):
            if r[i, j] == code:
                out[i, j >> 6] |= (<uint64_t>1) << (j & 63)
    return out_arr


def doa_pair_histogram(double[::1] mas, signed char[:, ::1] r):
    """Histogram ``h[den, num]`` over ordered pairs ``mas[a] > mas[b]``.

    ``r`` codes responses as 1 (right), 0 (wrong), -1 (not answered); ``den``
    counts exercises both answered with different results and ``num`` those
    where ``a`` is right. Pairs with ``den == 0`` are not recorded.
    """
    cdef Py_ssize_t n = r.shape[0], m = r.shape[1]
    if mas.shape[0] != n:
        raise ValueError("mastery and response table disagree on student count")
    cdef Py_ssize_t words = (m + 63) // 64
    hist_arr = np.zeros((m + 1, m + 1), dtype=np.int64)
    if words == 0:
        return hist_arr
    cdef long long[:, ::1] hist = hist_arr
    cdef uint64_t[:, ::1] right = _pack(r, 1, words)
    cdef uint64_t[:, ::1] wrong = _pack(r, 0, words)
    cdef Py_ssize_t a, b, w
    cdef int n_ab, n_ba, den
    with nogil:
        for a in range(n):
            for b in range(a + 1, n):
                if mas[a] == mas[b]:
                    continue
                n_ab = 0
                n_ba = 0
                for w in range(words):
                    n_ab += dualcd_popcount(right[a, w] & wrong[b, w])
                    n_ba += dualcd_popcount(right[b, w] & wrong[a, w])
                den = n_ab + n_ba
                if den == 0:
                    continue
                if mas[a] > mas[b]:
                    hist[den, n_ab] += 1
                else:
                    hist[den, n_ba] += 1
    return hist_arr
