# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled cyclic coordinate descent on Gram inputs.

Same update sequence as the NumPy fallback; compiled with floating-point
contraction disabled so both kernels round identically.
"""

from libc.math cimport fabs


def cd_lasso_gram(double[:, ::1] G, double[::1] q, double lam, double tol,
                  Py_ssize_t max_iters, double[::1] beta, double[::1] s):
    """Minimize (1/2) b'Gb - q'b + lam*|b|_1 by cyclic coordinate descent.

    ``beta`` and ``s`` (the running product G @ beta) are updated in place.
    Returns (sweeps, converged).
    """
    cdef Py_ssize_t m = q.shape[0]
    cdef Py_ssize_t j, k, sweep
    cdef double gjj, bj, zj, bnew, delta, adelta, max_change
    cdef bint converged = 0
    cdef Py_ssize_t sweeps = 0

    for sweep in range(max_iters):
        max_change = 0.0
        for j in range(m):
            gjj = G[j, j]
            if gjj <= 0.0:
                continue
            bj = beta[j]
            zj = q[j] - s[j] + gjj * bj
            if zj > lam:
                bnew = (zj - lam) / gjj
            elif zj < -lam:
                bnew = (zj + lam) / gjj
            else:
                bnew = 0.0
            delta = bnew - bj
            if delta != 0.0:
                beta[j] = bnew
                for k in range(m):
                    s[k] = s[k] + G[j, k] * delta
                adelta = fabs(delta)
                if adelta > max_change:
                    max_change = adelta
        sweeps = sweep + 1
        if max_change < tol:
            converged = 1
            break
    return sweeps, bool(converged)
