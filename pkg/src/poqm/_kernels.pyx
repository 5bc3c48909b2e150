# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops. Signatures and semantics mirror ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sqrt

cnp.import_array()

cdef double SNAP = 1e-12


def apply_1q(double complex[::1] amps, int n, int q, const double complex[:, :] u):
    """Apply a 2x2 matrix to qubit ``q`` in place (qubit 0 is the most significant)."""
    cdef Py_ssize_t dim = amps.shape[0]
    cdef Py_ssize_t stride = (<Py_ssize_t>1) << (n - 1 - q)
    cdef Py_ssize_t base, j
    cdef double complex u00 = u[0, 0], u01 = u[0, 1], u10 = u[1, 0], u11 = u[1, 1]
    cdef double complex a0, a1
    base = 0
    while base < dim:
        for j in range(base, base + stride):
            a0 = amps[j]
            a1 = amps[j + stride]
            amps[j] = u00 * a0 + u01 * a1
            amps[j + stride] = u10 * a0 + u11 * a1
        base += 2 * stride


def prob_zero(const double complex[::1] amps, int n, int q):
    cdef Py_ssize_t dim = amps.shape[0]
    cdef Py_ssize_t stride = (<Py_ssize_t>1) << (n - 1 - q)
    cdef Py_ssize_t base, j
    cdef double total = 0.0
    cdef double complex a
    base = 0
    while base < dim:
        for j in range(base, base + stride):
            a = amps[j]
            total += a.real * a.real + a.imag * a.imag
        base += 2 * stride
    return total


def collapse_drop(const double complex[::1] amps, int n, int q, int bit):
    """Project qubit ``q`` onto ``bit``, remove it, and renormalise."""
    cdef Py_ssize_t dim = amps.shape[0]
    cdef Py_ssize_t stride = (<Py_ssize_t>1) << (n - 1 - q)
    cdef Py_ssize_t base, j, k = 0
    cdef double norm = 0.0
    cdef double complex a
    out_arr = np.empty(dim // 2, dtype=np.complex128)
    cdef double complex[::1] out = out_arr
    base = bit * stride
    while base < dim:
        for j in range(base, base + stride):
            a = amps[j]
            out[k] = a
            norm += a.real * a.real + a.imag * a.imag
            k += 1
        base += 2 * stride
    norm = sqrt(norm)
    if norm > 0.0:
        for j in range(k):
            out[j] = out[j] / norm
    return out_arr


def measure_product(const double[:, ::1] phi, const double[:, ::1] angle, const double[:, ::1] u):
    cdef Py_ssize_t t, i
    cdef Py_ssize_t T = phi.shape[0], n = phi.shape[1]
    cdef double c, p0
    out_arr = np.empty((T, n), dtype=np.uint8)
    cdef unsigned char[:, ::1] out = out_arr
    for t in range(T):
        for i in range(n):
            c = cos(phi[t, i] - angle[t, i])
            p0 = c * c
            if p0 > 1.0 - SNAP:
                p0 = 1.0
            elif p0 < SNAP:
                p0 = 0.0
            out[t, i] = 1 if u[t, i] >= p0 else 0
    return out_arr


def sample_categorical(const double[:, ::1] probs, const double[::1] u):
    cdef Py_ssize_t T = probs.shape[0], d = probs.shape[1]
    cdef Py_ssize_t t, j, idx
    cdef double total, acc
    out_arr = np.empty(T, dtype=np.int64)
    cdef long long[::1] out = out_arr
    cum_arr = np.empty(d, dtype=np.float64)
    cdef double[::1] cum = cum_arr
    for t in range(T):
        acc = 0.0
        for j in range(d):
            acc += probs[t, j]
            cum[j] = acc
        total = acc
        idx = 0
        for j in range(d):
            if u[t] >= cum[j] / total:
                idx += 1
        if idx > d - 1:
            idx = d - 1
        out[t] = idx
    return out_arr


def rows_equal(const unsigned char[:, ::1] a, const unsigned char[:, ::1] b):
    cdef Py_ssize_t T = a.shape[0], n = a.shape[1]
    cdef Py_ssize_t t, i
    out_arr = np.ones(T, dtype=np.bool_)
    cdef cnp.npy_bool[::1] out = out_arr
    for t in range(T):
        for i in range(n):
            if a[t, i] != b[t, i]:
                out[t] = 0
                break
    return out_arr
