"""Two-stage Lasso pipelines and the baseline estimators.

The flagship pipeline regresses each endogenous column on its own
instrument block (Lasso, OLS, or support-oracle OLS), forms the fitted
regressors x_hat_j = Z_j pi_hat_j, then fits the main equation of y on
x_hat (again Lasso or an OLS variant). Penalty levels come from rate-
driven rules, not cross-validation:

    lambda1 = factor1 * sqrt(log d / n)
    lambda2 = factor2 * k2 * max(sqrt(k1 log d / n), sqrt(log p / n))

with natural logs and default factors 0.4 and 0.1.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from numpy.typing import NDArray

from .errors import ConfigError, SingularGram
from .solver import LassoConfig, lasso_fit, ols_fit

if TYPE_CHECKING:  # import cycle: datagen builds on the types defined here
    from .datagen import Dataset, ModelSpec

Vector = NDArray[np.float64]
Matrix = NDArray[np.float64]


class StageMethod(enum.Enum):
    """How one stage is estimated. ORACLE_OLS is OLS restricted to the
    true support, which must be supplied."""

    LASSO = "lasso"
    OLS = "ols"
    ORACLE_OLS = "oracle_ols"


@dataclass(frozen=True)
class TuningRule:
    """Penalty rule factors, with optional hard overrides that win."""

    stage1_factor: float = 0.4
    stage2_factor: float = 0.1
    override_lambda1: float | None = None
    override_lambda2: float | None = None

    def __post_init__(self) -> None:
        if self.stage1_factor <= 0 or self.stage2_factor <= 0:
            raise ConfigError("tuning factors must be > 0")
        for name in ("override_lambda1", "override_lambda2"):
            val = getattr(self, name)
            if val is not None and (not math.isfinite(val) or val < 0):
                raise ConfigError(f"{name} must be finite and >= 0, got {val}")

    def lambda1(self, d: int, n: int) -> float:
        if self.override_lambda1 is not None:
            return self.override_lambda1
        return lambda1_rule(d, n, self.stage1_factor)

    def lambda2(self, k1: int, k2: int, d: int, p: int, n: int) -> float:
        if self.override_lambda2 is not None:
            return self.override_lambda2
        return lambda2_rule(k1, k2, d, p, n, self.stage2_factor)


@dataclass(frozen=True)
class FitResult:
    """Output of one estimator pipeline on one dataset.

    pi_hat, x_hat, lambda1, stage1_method, and stage1_converged are None
    when no first stage ran (the one-step estimator).
    """

    beta_hat: Vector
    pi_hat: Matrix | None
    x_hat: Matrix | None
    lambda1: float | None
    lambda2: float
    stage1_method: StageMethod | None
    stage2_method: StageMethod
    stage1_converged: bool | None
    stage2_converged: bool

    @property
    def converged(self) -> bool:
        stage1 = True if self.stage1_converged is None else self.stage1_converged
        return stage1 and self.stage2_converged


def lambda1_rule(d: int, n: int, factor: float) -> float:
    """First-stage penalty: factor * sqrt(log d / n), natural log."""
    if d < 2 or n < 1:
        raise ConfigError(f"need d >= 2 and n >= 1, got d={d}, n={n}")
    return factor * math.sqrt(math.log(d) / n)


def lambda2_rule(k1: int, k2: int, d: int, p: int, n: int, factor: float) -> float:
    """Second-stage penalty: factor * k2 * max branch of the two rates."""
    if min(k1, k2, n) < 1 or d < 2 or p < 2:
        raise ConfigError(
            f"need k1, k2, n >= 1 and d, p >= 2, got k1={k1}, k2={k2}, d={d}, p={p}, n={n}"
        )
    return factor * k2 * max(
        math.sqrt(k1 * math.log(d) / n), math.sqrt(math.log(p) / n)
    )


def _ols_restricted(X: Matrix, y: Vector, support: np.ndarray, what: str) -> Vector:
    """OLS on a column subset, scattered back to full length."""
    if support.size == 0:
        raise ConfigError(f"{what}: oracle support is empty")
    beta = np.zeros(X.shape[1])
    try:
        beta[support] = ols_fit(X[:, support], y)
    except SingularGram as exc:
        raise SingularGram(f"{what}: {exc}") from exc
    return beta


def _solver_cfg(lam: float, solve_cfg: LassoConfig | None) -> LassoConfig:
    if solve_cfg is None:
        return LassoConfig(lam=lam)
    return LassoConfig(lam=lam, tol=solve_cfg.tol, max_iters=solve_cfg.max_iters)


def _first_stage(
    data: Dataset,
    method: StageMethod,
    lambda1: float,
    oracle_supports: list[np.ndarray] | None,
    solve_cfg: LassoConfig | None,
) -> tuple[Matrix, Matrix, bool]:
    n, p = data.X.shape
    d = data.Z.shape[2]
    pi_hat = np.zeros((p, d))
    converged = True
    if method is StageMethod.ORACLE_OLS and oracle_supports is None:
        raise ConfigError("ORACLE_OLS first stage needs the true supports")
    for j in range(p):
        Zj = data.Z[j]
        xj = data.X[:, j]
        if method is StageMethod.LASSO:
            sol = lasso_fit(Zj, xj, _solver_cfg(lambda1, solve_cfg))
            pi_hat[j] = sol.beta
            converged = converged and sol.converged
        elif method is StageMethod.OLS:
            try:
                pi_hat[j] = ols_fit(Zj, xj)
            except SingularGram as exc:
                raise SingularGram(f"first-stage equation {j}: {exc}") from exc
        else:
            pi_hat[j] = _ols_restricted(Zj, xj, oracle_supports[j], f"first-stage equation {j}")
    # x_hat columns are exactly Z_j pi_hat_j.
    x_hat = np.einsum("jil,jl->ij", data.Z, pi_hat)
    return pi_hat, x_hat, converged


def fit_first_stage(
    data: Dataset,
    method: StageMethod,
    lambda1: float,
    oracle_supports: list[np.ndarray] | None = None,
) -> tuple[Matrix, Matrix]:
    """Fit all p first-stage equations independently.

    Returns (pi_hat, x_hat) with pi_hat of shape (p, d) and x_hat of
    shape (n, p).
    """
    pi_hat, x_hat, _ = _first_stage(data, method, lambda1, oracle_supports, None)
    return pi_hat, x_hat


def _second_stage(
    X: Matrix,
    y: Vector,
    method: StageMethod,
    lambda2: float,
    oracle_support: np.ndarray | None,
    solve_cfg: LassoConfig | None,
) -> tuple[Vector, bool]:
    if method is StageMethod.LASSO:
        sol = lasso_fit(X, y, _solver_cfg(lambda2, solve_cfg))
        return sol.beta, sol.converged
    if method is StageMethod.OLS:
        return ols_fit(X, y), True
    if oracle_support is None:
        raise ConfigError("ORACLE_OLS second stage needs the true support")
    return _ols_restricted(X, y, oracle_support, "second stage"), True


def fit_h2sls(
    data: Dataset,
    rules: TuningRule,
    stage1: StageMethod,
    stage2: StageMethod,
    spec_for_rules: ModelSpec,
    solve_cfg: LassoConfig | None = None,
) -> FitResult:
    """Run the full two-stage pipeline on one dataset.

    spec_for_rules supplies the dimensions and sparsity levels that feed
    the penalty rules, plus the true supports when a stage is ORACLE_OLS.
    solve_cfg, when given, overrides the solver's tol/max_iters (its lam
    is ignored; the rules decide the penalty).
    """
    if stage1 is None or stage2 is None:
        raise ConfigError(
            "fit_h2sls needs concrete stage methods; the instrument-free "
            "design is fit_one_step_lasso"
        )
    n, p = data.X.shape
    spec = spec_for_rules
    if p != spec.p or data.Z.shape[2] != spec.d:
        raise ConfigError(
            f"data dimensions (p={p}, d={data.Z.shape[2]}) do not match the "
            f"spec (p={spec.p}, d={spec.d})"
        )
    lam1 = rules.lambda1(spec.d, n)
    lam2 = rules.lambda2(spec.k1, spec.k2, spec.d, spec.p, n)
    supports1 = spec.stage1_supports() if stage1 is StageMethod.ORACLE_OLS else None
    pi_hat, x_hat, s1_converged = _first_stage(data, stage1, lam1, supports1, solve_cfg)
    support2 = spec.support() if stage2 is StageMethod.ORACLE_OLS else None
    beta_hat, s2_converged = _second_stage(x_hat, data.y, stage2, lam2, support2, solve_cfg)
    return FitResult(
        beta_hat=beta_hat,
        pi_hat=pi_hat,
        x_hat=x_hat,
        lambda1=lam1,
        lambda2=lam2,
        stage1_method=stage1,
        stage2_method=stage2,
        stage1_converged=s1_converged,
        stage2_converged=s2_converged,
    )


def fit_one_step_lasso(
    data: Dataset,
    rules: TuningRule,
    spec_for_rules: ModelSpec,
    solve_cfg: LassoConfig | None = None,
) -> FitResult:
    """Lasso of y directly on the endogenous regressors, no instruments.

    Inconsistent under endogeneity; kept as the cautionary baseline.
    """
    n = data.X.shape[0]
    spec = spec_for_rules
    lam2 = rules.lambda2(spec.k1, spec.k2, spec.d, spec.p, n)
    sol = lasso_fit(data.X, data.y, _solver_cfg(lam2, solve_cfg))
    return FitResult(
        beta_hat=sol.beta,
        pi_hat=None,
        x_hat=None,
        lambda1=None,
        lambda2=lam2,
        stage1_method=None,
        stage2_method=StageMethod.LASSO,
        stage1_converged=None,
        stage2_converged=sol.converged,
    )
