# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled direct summation of the combined-field kernel."""
import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport sqrt, cos, sin

cnp.import_array()

cdef double FOUR_PI = 12.566370614359172


def direct_sum(const double[:, ::1] targets, const long[::1] tgt_ids, const double[:, ::1] sources,
               const double[:, ::1] normals, const long[::1] src_ids, const double complex[::1] charge,
               double kappa, double complex coupling, int num_threads=1):
    """out_i = sum_j G(x_i, y_j) charge_j over pairs with tgt_ids[i] != src_ids[j]."""
    cdef Py_ssize_t m = targets.shape[0], n = sources.shape[0], i, j
    out_arr = np.zeros(m, dtype=np.complex128)
    cdef double complex[::1] out = out_arr
    cdef double dx, dy, dz, R2, R, nd, c, s, inv, ar, ai, er, ei, acc_r, acc_i
    cdef double eta_r = coupling.real, eta_i = coupling.imag
    for i in prange(m, nogil=True, num_threads=num_threads, schedule="static"):
        acc_r = 0.0
        acc_i = 0.0
        for j in range(n):
            if tgt_ids[i] == src_ids[j]:
                continue
            dx = targets[i, 0] - sources[j, 0]
            dy = targets[i, 1] - sources[j, 1]
            dz = targets[i, 2] - sources[j, 2]
            R2 = dx * dx + dy * dy + dz * dz
            R = sqrt(R2)
            nd = normals[j, 0] * dx + normals[j, 1] * dy + normals[j, 2] * dz
            inv = 1.0 / (FOUR_PI * R2 * R)
            # a = ndot (1 - i k R) + eta R^2
            ar = (nd + eta_r * R2) * inv
            ai = (-nd * kappa * R + eta_i * R2) * inv
            if kappa != 0.0:
                c = cos(kappa * R)
                s = sin(kappa * R)
                er = c * ar - s * ai
                ei = s * ar + c * ai
            else:
                er = ar
                ei = ai
            acc_r = acc_r + er * charge[j].real - ei * charge[j].imag
            acc_i = acc_i + er * charge[j].imag + ei * charge[j].real
        out[i] = acc_r + 1j * acc_i
    return out_arr


def dense_block(const double[:, ::1] targets, const double[:, ::1] sources, const double[:, ::1] normals,
                double kappa, double complex coupling, int num_threads=1):
    """Kernel matrix K[i, j] = G(x_i, y_j)."""
    cdef Py_ssize_t m = targets.shape[0], n = sources.shape[0], i, j
    out_arr = np.empty((m, n), dtype=np.complex128)
    cdef double complex[:, ::1] out = out_arr
    cdef double dx, dy, dz, R2, R, nd, c, s, inv, ar, ai
    cdef double eta_r = coupling.real, eta_i = coupling.imag
    for i in prange(m, nogil=True, num_threads=num_threads, schedule="static"):
        for j in range(n):
            dx = targets[i, 0] - sources[j, 0]
            dy = targets[i, 1] - sources[j, 1]
            dz = targets[i, 2] - sources[j, 2]
            R2 = dx * dx + dy * dy + dz * dz
            R = sqrt(R2)
            nd = normals[j, 0] * dx + normals[j, 1] * dy + normals[j, 2] * dz
            inv = 1.0 / (FOUR_PI * R2 * R)
            ar = (nd + eta_r * R2) * inv
            ai = (-nd * kappa * R + eta_i * R2) * inv
            if kappa != 0.0:
                c = cos(kappa * R)
                s = sin(kappa * R)
                out[i, j] = (c * ar - s * ai) + 1j * (s * ar + c * ai)
            else:
                out[i, j] = ar + 1j * ai
    return out_arr
