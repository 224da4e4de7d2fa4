# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled cyclic Jacobi sweep; mirrors ``numerics._jacobi_py`` operation
for operation."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

cnp.import_array()


cdef double _off_norm(double[:, ::1] a, Py_ssize_t n) noexcept nogil:
    cdef double total = 0.0
    cdef double partial
    cdef Py_ssize_t p, k
    for p in range(n - 1):
        partial = 0.0
        for k in range(p + 1, n):
            partial += a[p, k] * a[p, k]
        total += partial
    return sqrt(2.0 * total)


def jacobi_sweeps(double[:, ::1] a, double tol, int max_sweeps):
    cdef Py_ssize_t n = a.shape[0]
    vt_arr = np.eye(n)
    cdef double[:, ::1] vt = vt_arr
    cdef double norm = 0.0
    cdef Py_ssize_t i, j, p, q, k
    for i in range(n):
        for j in range(n):
            norm += a[i, j] * a[i, j]
    norm = sqrt(norm)
    cdef double target = tol * norm
    cdef double skip = target / (n if n > 0 else 1)
    cdef double off = _off_norm(a, n)
    cdef int sweeps = 0
    cdef double apq, app, aqq, tau, t, c, s, xp, xq
    with nogil:
        while off > target and sweeps < max_sweeps:
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = a[p, q]
                    if fabs(apq) <= skip:
                        continue
                    app = a[p, p]
                    aqq = a[q, q]
                    tau = (aqq - app) / (2.0 * apq)
                    if fabs(tau) > 1e150:
                        t = 0.5 / tau
                    else:
                        t = 1.0 / (fabs(tau) + sqrt(1.0 + tau * tau))
                        if tau < 0.0:
                            t = -t
                    c = 1.0 / sqrt(1.0 + t * t)
                    s = t * c
                    for k in range(n):
                        xp = a[p, k]
                        xq = a[q, k]
                        a[p, k] = c * xp - s * xq
                        a[q, k] = s * xp + c * xq
                    a[p, p] = app - t * apq
                    a[q, q] = aqq + t * apq
                    a[p, q] = 0.0
                    a[q, p] = 0.0
                    for k in range(n):
                        a[k, p] = a[p, k]
                        a[k, q] = a[q, k]
                    for k in range(n):
                        xp = vt[p, k]
                        xq = vt[q, k]
                        vt[p, k] = c * xp - s * xq
                        vt[q, k] = s * xp + c * xq
            sweeps += 1
            off = _off_norm(a, n)
    return vt_arr, sweeps, off
