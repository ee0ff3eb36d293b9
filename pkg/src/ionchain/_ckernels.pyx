# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: Coulomb energy/gradient/Hessian and cyclic Jacobi."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, hypot

cnp.import_array()


def coulomb_terms(pos_in, charges_in, double kc):
    cdef double[:, ::1] pos = np.ascontiguousarray(pos_in, dtype=np.float64)
    cdef double[::1] charges = np.ascontiguousarray(charges_in, dtype=np.float64)
    cdef Py_ssize_t n = pos.shape[0]
    grad_arr = np.zeros((n, 3))
    hess_arr = np.zeros((3 * n, 3 * n))
    cdef double[:, ::1] grad = grad_arr
    cdef double[:, ::1] hess = hess_arr
    cdef double energy = 0.0
    cdef double d[3]
    cdef double r2, r, c, inv_r3, f, blk
    cdef Py_ssize_t j, l, a, b, jj, ll
    for j in range(n):
        for l in range(j + 1, n):
            for a in range(3):
                d[a] = pos[j, a] - pos[l, a]
            r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
            r = sqrt(r2)
            c = kc * charges[j] * charges[l]
            inv_r3 = 1.0 / (r2 * r)
            energy += c / r
            for a in range(3):
                f = -c * inv_r3 * d[a]
                grad[j, a] += f
                grad[l, a] -= f
            jj = 3 * j
            ll = 3 * l
            for a in range(3):
                for b in range(3):
                    blk = 3.0 * d[a] * d[b] * inv_r3 / r2
                    if a == b:
                        blk -= inv_r3
                    blk *= c
                    hess[jj + a, jj + b] += blk
                    hess[ll + a, ll + b] += blk
                    hess[jj + a, ll + b] -= blk
                    hess[ll + a, jj + b] -= blk
    return energy, grad_arr, hess_arr


def jacobi_eigh(a_in, double tol=1e-15, int max_sweeps=100):
    a_arr = np.array(a_in, dtype=np.float64, copy=True, order="C")
    cdef double[:, ::1] a = a_arr
    cdef Py_ssize_t n = a.shape[0]
    v_arr = np.eye(n)
    cdef double[:, ::1] v = v_arr
    cdef double norm2 = 0.0, off
    cdef double apq, app, aqq, theta, t, c, s, x, y
    cdef Py_ssize_t i, k, p, q
    cdef int sweeps = 0
    for i in range(n):
        for k in range(n):
            norm2 += a[i, k] * a[i, k]
    if n < 2 or norm2 == 0.0:
        return np.diag(a_arr).copy(), v_arr, sweeps
    while sweeps < max_sweeps:
        # summed directly: norm2 minus the diagonal would cancel
        off = 0.0
        for i in range(n):
            for k in range(n):
                if i != k:
                    off += a[i, k] * a[i, k]
        if off <= tol * tol * norm2:
            break
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                app = a[p, p]
                aqq = a[q, q]
                theta = (aqq - app) / (2.0 * apq)
                t = 1.0 / (fabs(theta) + hypot(theta, 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    x = a[k, p]
                    y = a[k, q]
                    a[k, p] = c * x - s * y
                    a[k, q] = s * x + c * y
                for k in range(n):
                    x = a[p, k]
                    y = a[q, k]
                    a[p, k] = c * x - s * y
                    a[q, k] = s * x + c * y
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    x = v[k, p]
                    y = v[k, q]
                    v[k, p] = c * x - s * y
                    v[k, q] = s * x + c * y
    return np.diag(a_arr).copy(), v_arr, sweeps
