# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled version of the tree contraction kernel.

Same contract as ``_pykernels.contract_batch``; see that docstring.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def contract_batch(cnp.int64_t[::1] hidx, cnp.int64_t[::1] child_ptr,
                   cnp.int64_t[::1] child_idx, double complex[:, :, :, ::1] props,
                   bint apply_root, long entry, cnp.int64_t[::1] offsets,
                   double complex[:, ::1] tabK, double complex[::1] tabC):
    cdef Py_ssize_t n = hidx.shape[0]
    cdef Py_ssize_t A = props.shape[0]
    cdef Py_ssize_t d = props.shape[3]
    cdef Py_ssize_t B = d if entry >= 0 else 1
    cdef Py_ssize_t maxm = 0
    cdef Py_ssize_t h
    for h in range(offsets.shape[0] - 1):
        if offsets[h + 1] - offsets[h] > maxm:
            maxm = offsets[h + 1] - offsets[h]

    w_arr = np.zeros((n, A, d, B), dtype=np.complex128)
    cdef double complex[:, :, :, ::1] w = w_arr
    batched_arr = np.zeros(n, dtype=np.int8)
    cdef signed char[::1] batched = batched_arr
    prod_arr = np.empty(maxm, dtype=np.complex128)
    cdef double complex[::1] prod = prod_arr
    bvec_arr = np.empty((maxm, B), dtype=np.complex128)
    cdef double complex[:, ::1] bvec = bvec_arr
    out_arr = np.empty((d, B), dtype=np.complex128)
    cdef double complex[:, ::1] out = out_arr

    cdef Py_ssize_t a, i, j, c, m, lo, hi, g, g2, b
    cdef bint has_batch
    cdef double complex acc, pm
    for a in range(A):
        for i in range(n):
            lo = offsets[hidx[i]]
            hi = offsets[hidx[i] + 1]
            has_batch = False
            for m in range(hi - lo):
                prod[m] = tabC[lo + m]
            for c in range(child_ptr[i], child_ptr[i + 1]):
                j = child_idx[c]
                if batched[j]:
                    has_batch = True
                    for m in range(hi - lo):
                        for b in range(B):
                            acc = 0
                            for g in range(d):
                                acc = acc + tabK[lo + m, g] * w[j, a, g, b]
                            bvec[m, b] = acc
                else:
                    for m in range(hi - lo):
                        acc = 0
                        for g in range(d):
                            acc = acc + tabK[lo + m, g] * w[j, a, g, 0]
                        prod[m] = prod[m] * acc
            if i == entry:
                has_batch = True
                for m in range(hi - lo):
                    for b in range(B):
                        bvec[m, b] = tabK[lo + m, b]
            for g in range(d):
                for b in range(B):
                    out[g, b] = 0
            for m in range(hi - lo):
                for g in range(d):
                    pm = tabK[lo + m, g] * prod[m]
                    if has_batch:
                        for b in range(B):
                            out[g, b] = out[g, b] + pm * bvec[m, b]
                    else:
                        out[g, 0] = out[g, 0] + pm
            if has_batch:
                batched[i] = 1
            if i < n - 1 or apply_root:
                for g in range(d):
                    for b in range(B):
                        acc = 0
                        for g2 in range(d):
                            acc = acc + props[a, i, g, g2] * out[g2, b]
                        w[i, a, g, b] = acc
            else:
                for g in range(d):
                    for b in range(B):
                        w[i, a, g, b] = out[g, b]
    return np.ascontiguousarray(w_arr[n - 1])
