"""Dense least-squares and l1-penalized least-squares solvers.

The Lasso program solved throughout the package is

    minimize_b  (1/2n) |y - X b|_2^2 + lam * |b|_1

with the gradient convention g(b) = (1/n) X'(y - X b). The minimizer is
found by cyclic coordinate descent with exact single-coordinate updates.
Internally the solve runs on Gram inputs (G = X'X/n, q = X'y/n): a sweep
then costs O(m^2) instead of O(n m), which is the difference between
minutes and hours for the simulation harness at large n.

A compiled kernel is preferred when the build produced one; a NumPy
fallback with the identical update sequence is selected otherwise. The
active kernel is reported in ``KERNEL_NAME``.

No intercept and no standardization: callers feed zero-mean data (the
data generator produces it). ``LassoConfig.center`` is an escape hatch
for external data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import ConfigError, EmptySupport, LengthMismatch, NonFinite, SingularGram

try:  # pragma: no cover - exercised implicitly by whichever build runs
    from . import _cd_kernel as _kernel

    KERNEL_NAME = "cython"
except ImportError:  # pragma: no cover
    from . import _cd_fallback as _kernel

    KERNEL_NAME = "numpy"

Vector = NDArray[np.float64]
Matrix = NDArray[np.float64]

# Reciprocal condition number of X'X below this raises SingularGram.
RCOND_LIMIT = 1e-12


@dataclass(frozen=True)
class DesignMatrix:
    """An n-by-m design with validated, finite entries."""

    values: Matrix

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ConfigError(f"design matrix must be 2-d, got ndim={values.ndim}")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise ConfigError(f"design matrix must be nonempty, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise NonFinite("design matrix contains non-finite entries")
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class LassoConfig:
    """Penalty level and convergence policy for one Lasso solve.

    tol is the threshold on the maximum absolute coordinate change within
    one sweep; max_iters counts sweeps. center subtracts column means from
    X and the mean from y before solving (off by default: the simulated
    data are zero-mean by construction).
    """

    lam: float
    tol: float = 1e-8
    max_iters: int = 10_000
    center: bool = False

    def __post_init__(self) -> None:
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ConfigError(f"lam must be finite and >= 0, got {self.lam}")
        if not np.isfinite(self.tol) or self.tol <= 0:
            raise ConfigError(f"tol must be finite and > 0, got {self.tol}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")


@dataclass(frozen=True)
class LassoSolution:
    beta: Vector
    iterations: int
    converged: bool
    objective: float


def soft_threshold(z: float, gamma: float) -> float:
    """Proximal map of the l1 penalty: sign(z) * max(|z| - gamma, 0)."""
    if gamma < 0:
        raise ConfigError(f"gamma must be >= 0, got {gamma}")
    if z > gamma:
        return z - gamma
    if z < -gamma:
        return z + gamma
    return 0.0


def _as_design(X: DesignMatrix | Matrix) -> DesignMatrix:
    if isinstance(X, DesignMatrix):
        return X
    return DesignMatrix(np.asarray(X, dtype=np.float64))


def _check_response(X: DesignMatrix, y: Vector) -> Vector:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1:
        raise ConfigError(f"response must be 1-d, got ndim={y.ndim}")
    if y.shape[0] != X.n:
        raise LengthMismatch(f"response length {y.shape[0]} != row count {X.n}")
    if not np.all(np.isfinite(y)):
        raise NonFinite("response contains non-finite entries")
    return y


def gram(X: DesignMatrix | Matrix) -> Matrix:
    """(1/n) X'X, symmetrized to kill BLAS rounding asymmetry."""
    X = _as_design(X)
    G = X.values.T @ X.values / X.n
    return (G + G.T) / 2.0


def objective_value(X: DesignMatrix | Matrix, y: Vector, beta: Vector, lam: float) -> float:
    X = _as_design(X)
    r = y - X.values @ beta
    return float(r @ r / (2.0 * X.n) + lam * np.abs(beta).sum())


def column_scale(X: DesignMatrix | Matrix) -> float:
    """Largest Gram diagonal, max_j |X_j|^2 / n: the curvature scale that
    converts a coordinate perturbation into a gradient perturbation."""
    X = _as_design(X)
    return float(np.max(np.einsum("ij,ij->j", X.values, X.values)) / X.n)


def kkt_violation(X: DesignMatrix | Matrix, y: Vector, beta: Vector, lam: float) -> float:
    """Worst excess over the subdifferential conditions at beta.

    With g = (1/n) X'(y - X beta): active coordinates must have
    g_j = lam * sign(beta_j), inactive ones |g_j| <= lam. Returns the
    largest violation in gradient units (0 means exact stationarity).
    """
    X = _as_design(X)
    y = _check_response(X, y)
    g = X.values.T @ (y - X.values @ beta) / X.n
    active = beta != 0.0
    worst = 0.0
    if np.any(active):
        worst = float(np.max(np.abs(g[active] - lam * np.sign(beta[active]))))
    if np.any(~active):
        worst = max(worst, float(np.max(np.abs(g[~active]) - lam)))
    return max(worst, 0.0)


def kkt_ok(
    X: DesignMatrix | Matrix, y: Vector, solution: LassoSolution, lam: float, tol: float
) -> bool:
    """Certificate for a converged solve: violation <= 10 * tol * columnscale."""
    return kkt_violation(X, y, solution.beta, lam) <= 10.0 * tol * column_scale(X)


def _center(Xv: Matrix, y: Vector) -> tuple[Matrix, Vector]:
    return Xv - Xv.mean(axis=0), y - y.mean()


def _cd_solve(
    Xv: Matrix, y: Vector, cfg: LassoConfig, beta0: Vector | None = None
) -> tuple[Vector, int, bool]:
    n, m = Xv.shape
    G = np.ascontiguousarray(Xv.T @ Xv / n)
    q = np.ascontiguousarray(Xv.T @ y / n)
    if beta0 is None:
        beta = np.zeros(m)
        s = np.zeros(m)
    else:
        beta = np.array(beta0, dtype=np.float64)
        s = G @ beta
    sweeps, converged = _kernel.cd_lasso_gram(G, q, cfg.lam, cfg.tol, cfg.max_iters, beta, s)
    return beta, int(sweeps), bool(converged)


def lasso_fit(X: DesignMatrix | Matrix, y: Vector, cfg: LassoConfig) -> LassoSolution:
    """Cyclic coordinate descent from beta = 0.

    converged is true iff the maximum absolute coordinate change in the
    final sweep fell below cfg.tol within cfg.max_iters sweeps. A
    non-converged solve is reported, not raised.
    """
    X = _as_design(X)
    y = _check_response(X, y)
    Xv = X.values
    if cfg.center:
        Xv, y = _center(Xv, y)
    beta, sweeps, converged = _cd_solve(Xv, y, cfg)
    return LassoSolution(
        beta=beta,
        iterations=sweeps,
        converged=converged,
        objective=objective_value(Xv, y, beta, cfg.lam),
    )


def _check_support(support, m: int) -> np.ndarray:
    K = np.asarray(sorted({int(j) for j in list(support)}), dtype=np.intp)
    if K.size == 0:
        raise EmptySupport("restricted fit needs a nonempty support")
    if K[0] < 0 or K[-1] >= m:
        raise ConfigError(f"support indices out of range for m={m}: {K.tolist()}")
    return K


def lasso_fit_restricted(
    X: DesignMatrix | Matrix, y: Vector, support, cfg: LassoConfig
) -> LassoSolution:
    """Lasso on the columns in ``support``; all other coordinates exactly 0."""
    X = _as_design(X)
    y = _check_response(X, y)
    K = _check_support(support, X.m)
    Xv = X.values
    if cfg.center:
        Xv, y = _center(Xv, y)
    beta_k, sweeps, converged = _cd_solve(np.ascontiguousarray(Xv[:, K]), y, cfg)
    beta = np.zeros(X.m)
    beta[K] = beta_k
    return LassoSolution(
        beta=beta,
        iterations=sweeps,
        converged=converged,
        objective=objective_value(Xv, y, beta, cfg.lam),
    )


def gram_rcond(X: DesignMatrix | Matrix) -> float:
    """Reciprocal 2-norm condition number of X'X (squared singular values)."""
    X = _as_design(X)
    if X.m > X.n:
        # X'X has m - n zero eigenvalues that the thin SVD cannot see.
        return 0.0
    sv = np.linalg.svd(X.values, compute_uv=False)
    top = sv[0] ** 2
    if top == 0.0:
        return 0.0
    return float(sv[-1] ** 2 / top)


def ols_fit(X: DesignMatrix | Matrix, y: Vector) -> Vector:
    """(X'X)^{-1} X'y, computed through an SVD solve for stability.

    Raises SingularGram when the Gram reciprocal condition number falls
    below RCOND_LIMIT (collinear columns, or m > n).
    """
    X = _as_design(X)
    y = _check_response(X, y)
    if gram_rcond(X) < RCOND_LIMIT:
        raise SingularGram(
            f"Gram matrix is singular at rcond < {RCOND_LIMIT:g} (n={X.n}, m={X.m})"
        )
    beta, *_ = np.linalg.lstsq(X.values, y, rcond=None)
    return beta
