"""Pure-Python cyclic Jacobi sweep, used when the compiled kernel is absent.

Performs the same rotations in the same order as ``aed_eend._ext._jacobi``
so both backends agree to rounding.
"""

import math

import numpy as np


def jacobi_sweeps(a, tol, max_sweeps):
    """Diagonalise symmetric ``a`` in place.

    Returns ``(vt, sweeps, off)``: the rows of ``vt`` are the eigenvectors,
    ``sweeps`` the number of sweeps run and ``off`` the final off-diagonal
    Frobenius norm. Eigenvalues are left on the diagonal of ``a``.
    """
    n = a.shape[0]
    vt = np.eye(n)
    norm = _frobenius(a)
    target = tol * norm
    skip = target / max(n, 1)
    off = _off_norm(a)
    sweeps = 0
    while off > target and sweeps < max_sweeps:
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= skip:
                    continue
                app = a[p, p]
                aqq = a[q, q]
                c, s, t = _rotation(app, aqq, apq)
                xp = a[p].copy()
                xq = a[q].copy()
                a[p] = c * xp - s * xq
                a[q] = s * xp + c * xq
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                a[:, p] = a[p]
                a[:, q] = a[q]
                vp = vt[p].copy()
                vq = vt[q].copy()
                vt[p] = c * vp - s * vq
                vt[q] = s * vp + c * vq
        sweeps += 1
        off = _off_norm(a)
    return vt, sweeps, off


def _rotation(app, aqq, apq):
    tau = (aqq - app) / (2.0 * apq)
    if abs(tau) > 1e150:
        t = 0.5 / tau
    else:
        t = 1.0 / (abs(tau) + math.sqrt(1.0 + tau * tau))
        if tau < 0.0:
            t = -t
    c = 1.0 / math.sqrt(1.0 + t * t)
    return c, t * c, t


def _frobenius(a):
    total = 0.0
    for row in a:
        for x in row.tolist():
            total += x * x
    return math.sqrt(total)


def _off_norm(a):
    n = a.shape[0]
    total = 0.0
    for p in range(n - 1):
        partial = 0.0
        for x in a[p, p + 1:].tolist():
            partial += x * x
        total += partial
    return math.sqrt(2.0 * total)
