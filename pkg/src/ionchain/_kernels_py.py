"""Pure-Python kernels.

Same algorithms and signatures as the compiled ``_ckernels`` module; used when
the extension is unavailable and as a cross-check in the test suite.
"""

from __future__ import annotations

import math

import numpy as np


def coulomb_terms(pos, charges, kc):
    """Coulomb energy, gradient (N, 3) and Hessian (3N, 3N).

    ``pos`` is (N, 3) in m, ``charges`` in C and ``kc`` is 1/(4 pi eps0).
    """
    pos = np.ascontiguousarray(pos, dtype=float)
    n = pos.shape[0]
    grad = np.zeros((n, 3))
    hess = np.zeros((3 * n, 3 * n))
    energy = 0.0
    for j in range(n):
        for l in range(j + 1, n):
            d = pos[j] - pos[l]
            r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
            r = math.sqrt(r2)
            c = kc * charges[j] * charges[l]
            inv_r3 = 1.0 / (r2 * r)
            energy += c / r
            f = -c * inv_r3 * d
            grad[j] += f
            grad[l] -= f
            blk = c * (3.0 * np.outer(d, d) * inv_r3 / r2 - np.eye(3) * inv_r3)
            jj = 3 * j
            ll = 3 * l
            hess[jj:jj + 3, jj:jj + 3] += blk
            hess[ll:ll + 3, ll:ll + 3] += blk
            hess[jj:jj + 3, ll:ll + 3] -= blk
            hess[ll:ll + 3, jj:jj + 3] -= blk
    return energy, grad, hess


def jacobi_eigh(a, tol=1e-15, max_sweeps=100):
    """Cyclic Jacobi diagonalization of a real symmetric matrix.

    Returns ``(w, v, sweeps)`` with eigenvalues in the order they end up on the
    diagonal (unsorted) and eigenvectors as the columns of ``v``.
    """
    a = np.array(a, dtype=float, copy=True)
    n = a.shape[0]
    v = np.eye(n)
    norm2 = float(np.sum(a * a))
    sweeps = 0
    if n < 2 or norm2 == 0.0:
        return np.diag(a).copy(), v, sweeps
    while sweeps < max_sweeps:
        # summed directly: norm2 minus the diagonal would cancel
        off = float(np.sum((a - np.diag(np.diag(a))) ** 2))
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
                t = 1.0 / (abs(theta) + math.hypot(theta, 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    return np.diag(a).copy(), v, sweeps
