# cython: boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled state-vector kernels.

Gather-form application of ``out = diag * psi + coeff * sum_i flip_i(psi)``
over an occupation-number basis; one fused implementation covers the real
(Lanczos) and complex (propagation) paths.  ``out`` must not alias ``psi``.
"""

import numpy as np

cimport numpy as cnp

BACKEND = "cython"

ctypedef fused amp_t:
    double
    double complex


def apply_xor(amp_t[::1] psi, amp_t[::1] out, amp_t[::1] diag, amp_t coeff, int n_sites):
    """Full-basis apply: site flips are index XORs on the 2**n hypercube."""
    cdef Py_ssize_t dim = psi.shape[0]
    cdef Py_ssize_t k, i
    cdef amp_t acc
    with nogil:
        for k in range(dim):
            acc = diag[k] * psi[k]
            for i in range(n_sites):
                acc = acc + coeff * psi[k ^ ((<Py_ssize_t> 1) << i)]
            out[k] = acc


def apply_table(amp_t[::1] psi, amp_t[::1] out, amp_t[::1] diag, amp_t coeff,
                cnp.int64_t[:, ::1] table):
    """Truncated-basis apply; ``table[k, i]`` is the flip target or -1 if outside."""
    cdef Py_ssize_t dim = psi.shape[0]
    cdef Py_ssize_t n_sites = table.shape[1]
    cdef Py_ssize_t k, i
    cdef cnp.int64_t t
    cdef amp_t acc
    with nogil:
        for k in range(dim):
            acc = diag[k] * psi[k]
            for i in range(n_sites):
                t = table[k, i]
                if t >= 0:
                    acc = acc + coeff * psi[t]
            out[k] = acc
