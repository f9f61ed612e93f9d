# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the hot kernels (see _core_py for the
reference semantics)."""

import numpy as np

cimport cython
from cython.parallel cimport prange

NAME = "compiled"


def bsr_matvec(long[::1] indptr, long[::1] indices, double[:, :, ::1] blocks,
               double[::1] x, double[::1] out):
    cdef Py_ssize_t n_rows = indptr.shape[0] - 1
    cdef Py_ssize_t bs = blocks.shape[1]
    cdef Py_ssize_t r, k, i, j, col
    cdef double acc
    with nogil:
        for r in range(n_rows):
            for i in range(bs):
                out[r * bs + i] = 0.0
            for k in range(indptr[r], indptr[r + 1]):
                col = indices[k]
                for i in range(bs):
                    acc = 0.0
                    for j in range(bs):
                        acc += blocks[k, i, j] * x[col * bs + j]
                    out[r * bs + i] += acc
    return np.asarray(out)


def block_diag_matvec(double[:, :, ::1] blocks, double[::1] x,
                      double[::1] out):
    cdef Py_ssize_t n = blocks.shape[0]
    cdef Py_ssize_t bs = blocks.shape[1]
    cdef Py_ssize_t r, i, j
    cdef double acc
    with nogil:
        for r in range(n):
            for i in range(bs):
                acc = 0.0
                for j in range(bs):
                    acc += blocks[r, i, j] * x[r * bs + j]
                out[r * bs + i] = acc
    return np.asarray(out)
