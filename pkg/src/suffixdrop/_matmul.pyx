# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled matrix-multiply kernel with a pinned accumulation order.

Operands are float32; every output cell accumulates its products in a
float64 register over the shared dimension in ascending index order, then
rounds once to float32.  That is exactly the semantics of the pure-NumPy
fallback in suffixdrop.kernels, so the two lanes agree bit for bit: each
float32*float32 product is exact in float64, and the per-cell addition
sequence is identical (the i/p/j loop nesting below performs one add per
shared index p for every cell, in ascending p).
"""

import numpy as np


def matmul_f32(const float[:, ::1] a, const float[:, ::1] b):
    if a.shape[1] != b.shape[0]:
        raise ValueError("shared dimension mismatch")
    cdef Py_ssize_t m = a.shape[0]
    cdef Py_ssize_t kk = a.shape[1]
    cdef Py_ssize_t n = b.shape[1]
    acc_arr = np.zeros((m, n), dtype=np.float64)
    cdef double[:, ::1] acc = acc_arr
    cdef Py_ssize_t i, p, j
    cdef double aip
    with nogil:
        for i in range(m):
            for p in range(kk):
                aip = <double> a[i, p]
                for j in range(n):
                    acc[i, j] = acc[i, j] + aip * (<double> b[p, j])
    return acc_arr.astype(np.float32)
