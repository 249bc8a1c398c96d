"""Pure NumPy coordinate-descent kernel, used when the extension is absent.

Executes the exact arithmetic sequence of the compiled kernel (scalar
updates, multiply-then-add row axpy), so the two produce bitwise identical
iterates. Only the speed differs.
"""

from __future__ import annotations

import numpy as np


def cd_lasso_gram(G, q, lam, tol, max_iters, beta, s):
    """Minimize (1/2) b'Gb - q'b + lam*|b|_1 by cyclic coordinate descent.

    ``beta`` and ``s`` (the running product G @ beta) are updated in place.
    Returns (sweeps, converged).
    """
    m = q.shape[0]
    diag = np.ascontiguousarray(np.diag(G))
    converged = False
    sweeps = 0
    for sweep in range(max_iters):
        max_change = 0.0
        for j in range(m):
            gjj = diag[j]
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
                s += G[j] * delta
                adelta = abs(delta)
                if adelta > max_change:
                    max_change = adelta
        sweeps = sweep + 1
        if max_change < tol:
            converged = True
            break
    return sweeps, converged
