# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled CSR kernels. Same contracts as ``_pykernels``."""
import numpy as np

cimport numpy as cnp

cnp.import_array()


def csr_matmat(const cnp.int64_t[::1] indptr,
               const cnp.int64_t[::1] indices,
               const double[::1] data,
               const double[:, ::1] dense,
               Py_ssize_t n_rows):
    cdef Py_ssize_t k = dense.shape[1]
    out = np.zeros((n_rows, k), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j, c
    cdef cnp.int64_t col
    cdef double v
    with nogil:
        for i in range(n_rows):
            for j in range(indptr[i], indptr[i + 1]):
                col = indices[j]
                v = data[j]
                for c in range(k):
                    o[i, c] += v * dense[col, c]
    return out


def csr_row_sample(const cnp.int64_t[::1] indptr,
                   const double[::1] keys,
                   Py_ssize_t fanout):
    """Keep, per row, the ``fanout`` entries with the smallest keys.

    Returns a boolean mask over entries. Rows with at most ``fanout``
    entries are kept whole. Ties resolve toward the lower entry position.
    """
    cdef Py_ssize_t n_rows = indptr.shape[0] - 1
    keep = np.zeros(keys.shape[0], dtype=np.uint8)
    cdef cnp.uint8_t[::1] kp = keep
    cdef Py_ssize_t i, j, t, start, stop, best
    cdef double bk
    with nogil:
        for i in range(n_rows):
            start = indptr[i]
            stop = indptr[i + 1]
            if stop - start <= fanout:
                for j in range(start, stop):
                    kp[j] = 1
                continue
            for t in range(fanout):
                best = -1
                bk = 0.0
                for j in range(start, stop):
                    if kp[j] == 0 and (best < 0 or keys[j] < bk):
                        best = j
                        bk = keys[j]
                kp[best] = 1
    return keep.astype(bool)
