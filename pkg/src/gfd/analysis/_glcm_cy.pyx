# cython: boundscheck=False, wraparound=False, cdivision=True
# Compiled pair-counting kernel. Callers validate that the offset fits.

import numpy as np

cimport numpy as cnp

cnp.import_array()


def pair_counts(cnp.int32_t[:, :] levels, int dr, int dc, int num_levels):
    cdef Py_ssize_t h = levels.shape[0]
    cdef Py_ssize_t w = levels.shape[1]
    cdef Py_ssize_t r0 = -dr if dr < 0 else 0
    cdef Py_ssize_t r1 = h - (dr if dr > 0 else 0)
    cdef Py_ssize_t c0 = -dc if dc < 0 else 0
    cdef Py_ssize_t c1 = w - (dc if dc > 0 else 0)
    out = np.zeros((num_levels, num_levels), dtype=np.int64)
    cdef cnp.int64_t[:, :] counts = out
    cdef Py_ssize_t r, c
    for r in range(r0, r1):
        for c in range(c0, c1):
            counts[levels[r, c], levels[r + dr, c + dc]] += 1
    return out
