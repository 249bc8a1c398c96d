"""Seeded generation of triangular simultaneous-equation datasets.

The model has p endogenous regressors, each with its own block of d
instruments:

    x_ij = z_ij' pi*_j + eta_ij        (first stage, one equation per j)
    y_i  = x_i' beta* + eps_i          (main equation)

(eps_i, eta_i) is joint normal: Var(eps) = sigma_eps^2, the eta block is
sigma_eta^2 * I, and corr(eps, eta_ij) = rho for every j. Instruments are
normal with Var(z_ijl) = sigma_z^2, corr(z_ijl, z_ij'l) = row_corr across
equations at the same l, and no correlation across l. Draws go through
lower-triangular Cholesky factors applied to standard normals.

Reproducibility contract: every replication owns a PCG64 stream keyed by
SeedSequence((master_seed, replication_index)); given the same SeedPolicy
the generated dataset is bit-identical regardless of process or thread
layout. Draw order is frozen: the (eps, eta) matrix first, then the
instrument normals, shape (n, d, p). Standard normals use the NumPy
ziggurat method; both identities are recorded in report metadata because
third-digit table reproduction is sensitive to them.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import NDArray

from .errors import ConfigError, NotPD, UnknownExperiment
from .estimators import StageMethod, TuningRule

Vector = NDArray[np.float64]
Matrix = NDArray[np.float64]

RNG_IDENTITY = "numpy.random.PCG64 / SeedSequence((master_seed, replication_index))"
NORMAL_METHOD = "ziggurat"

DEFAULT_RHO = 0.3
EXPERIMENT_IDS = tuple(range(1, 15))


@dataclass(frozen=True)
class ModelSpec:
    """Complete description of one data-generating process."""

    p: int
    d: int
    k1: int
    k2: int
    beta_star: Vector
    pi_star: Matrix
    sigma_eps: float
    sigma_eta: float
    sigma_z: float
    rho: float
    row_corr: float

    def __post_init__(self) -> None:
        beta = np.asarray(self.beta_star, dtype=np.float64)
        pi = np.asarray(self.pi_star, dtype=np.float64)
        object.__setattr__(self, "beta_star", beta)
        object.__setattr__(self, "pi_star", pi)
        if self.p < 1 or self.d < 1:
            raise ConfigError(f"p and d must be >= 1, got p={self.p}, d={self.d}")
        if beta.shape != (self.p,):
            raise ConfigError(f"beta_star must have shape ({self.p},), got {beta.shape}")
        if pi.shape != (self.p, self.d):
            raise ConfigError(f"pi_star must have shape ({self.p}, {self.d}), got {pi.shape}")
        if not (0 <= self.k2 <= self.p) or not (0 <= self.k1 <= self.d):
            raise ConfigError(f"sparsity out of range: k1={self.k1}, k2={self.k2}")
        if int(np.count_nonzero(beta)) > self.k2:
            raise ConfigError("beta_star has more nonzeros than k2")
        if int(np.max(np.count_nonzero(pi, axis=1), initial=0)) > self.k1:
            raise ConfigError("some pi_star row has more nonzeros than k1")
        if self.sigma_eps <= 0 or self.sigma_z <= 0:
            raise ConfigError("sigma_eps and sigma_z must be > 0")
        if self.sigma_eta < 0:
            raise ConfigError("sigma_eta must be >= 0")
        if not (-1.0 < self.rho < 1.0):
            raise ConfigError(f"rho must lie in (-1, 1), got {self.rho}")
        if not (0.0 <= self.row_corr < 1.0):
            raise ConfigError(f"row_corr must lie in [0, 1), got {self.row_corr}")
        if self.sigma_eta > 0 and self.p * self.rho**2 >= 1.0:
            raise NotPD(
                f"error covariance is not positive definite: p*rho^2 = "
                f"{self.p * self.rho ** 2:g} >= 1"
            )

    def support(self) -> np.ndarray:
        """Indices of the relevant main-equation coefficients, J(beta*)."""
        return np.flatnonzero(self.beta_star)

    def stage1_supports(self) -> list[np.ndarray]:
        """Per-equation supports of pi*."""
        return [np.flatnonzero(self.pi_star[j]) for j in range(self.p)]


@dataclass(frozen=True)
class Dataset:
    """One realized sample. Latent errors are retained for diagnostics."""

    y: Vector
    X: Matrix
    Z: Matrix  # shape (p, n, d); Z[j] is the instrument block of equation j
    eps: Vector
    eta: Matrix

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class SeedPolicy:
    """Names one replication's RNG stream as a pure function of its fields."""

    master_seed: int
    replication_index: int = 0

    def __post_init__(self) -> None:
        if not (0 <= self.master_seed < 2**64):
            raise ConfigError(f"master_seed must fit in 64 bits, got {self.master_seed}")
        if self.replication_index < 0:
            raise ConfigError(f"replication_index must be >= 0, got {self.replication_index}")

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence((self.master_seed, self.replication_index))
        return np.random.Generator(np.random.PCG64(seq))


def _cholesky_pd(cov: Matrix, what: str) -> Matrix:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NotPD(f"{what} is not positive definite") from exc


def sample_mvn(cov: Matrix, count: int, seed: SeedPolicy) -> Matrix:
    """count independent rows from N(0, cov), via the lower Cholesky factor."""
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ConfigError(f"covariance must be square, got shape {cov.shape}")
    if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12):
        raise ConfigError("covariance must be symmetric")
    L = _cholesky_pd(cov, "covariance")
    draws = seed.generator().standard_normal((count, cov.shape[0]))
    return draws @ L.T


def build_error_cov(spec: ModelSpec) -> Matrix:
    """(p+1)x(p+1) covariance of (eps, eta_1, ..., eta_p).

    Positive definite iff sigma_eta > 0 and p * rho^2 < 1 (Schur
    complement on the eta block).
    """
    if spec.sigma_eta > 0 and spec.p * spec.rho**2 >= 1.0:
        raise NotPD(f"p*rho^2 = {spec.p * spec.rho ** 2:g} >= 1")
    cov = np.zeros((spec.p + 1, spec.p + 1))
    cov[0, 0] = spec.sigma_eps**2
    cov[0, 1:] = cov[1:, 0] = spec.rho * spec.sigma_eps * spec.sigma_eta
    cov[1:, 1:] = spec.sigma_eta**2 * np.eye(spec.p)
    return cov


def _equicorr_block(spec: ModelSpec) -> Matrix:
    """p x p covariance of (z_i1l, ..., z_ipl) at one fixed l."""
    p, r = spec.p, spec.row_corr
    return spec.sigma_z**2 * ((1.0 - r) * np.eye(p) + r * np.ones((p, p)))


def build_instrument_cov(spec: ModelSpec) -> Matrix:
    """Covariance of vec(z_i') in l-major order: d identical p x p
    equicorrelation blocks on the diagonal, zero elsewhere.

    Materializes a (p*d)^2 matrix; meant for small cases and tests. The
    generator itself only ever factors the p x p block.
    """
    return np.kron(np.eye(spec.d), _equicorr_block(spec))


def generate(spec: ModelSpec, n: int, seed: SeedPolicy) -> Dataset:
    """Draw one dataset of n observations from the spec, deterministically."""
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    rng = seed.generator()

    if spec.sigma_eta == 0.0:
        # Degenerate errors: eta identically zero, eps drawn alone.
        eps = spec.sigma_eps * rng.standard_normal(n)
        eta = np.zeros((n, spec.p))
    else:
        L = _cholesky_pd(build_error_cov(spec), "error covariance")
        W = rng.standard_normal((n, spec.p + 1)) @ L.T
        eps = W[:, 0]
        eta = W[:, 1:]

    # One Cholesky factor serves all d blocks; the p-axis carries the
    # cross-equation correlation, the l-axis is independent.
    Lb = _cholesky_pd(_equicorr_block(spec), "instrument covariance block")
    Zt = rng.standard_normal((n, spec.d, spec.p)) @ Lb.T
    Z = np.ascontiguousarray(np.moveaxis(Zt, 2, 0))  # (p, n, d)

    x_star = np.einsum("jil,jl->ij", Z, spec.pi_star)
    X = x_star + eta
    y = X @ spec.beta_star + eps
    return Dataset(y=y, X=X, Z=Z, eps=eps, eta=eta)


@dataclass(frozen=True)
class ExperimentDesign:
    """One catalogue row: a DGP plus the estimator pipeline that runs on it.

    stage1 is None for the one-step design (the estimator ignores the
    instruments entirely).
    """

    experiment_id: int
    spec: ModelSpec
    stage1: StageMethod | None
    stage2: StageMethod
    tuning: TuningRule = field(default_factory=TuningRule)

    @property
    def one_step(self) -> bool:
        return self.stage1 is None


def _base_spec(rho: float) -> ModelSpec:
    p, d, k1, k2 = 50, 100, 4, 5
    beta = np.zeros(p)
    beta[:k2] = 1.0
    pi = np.zeros((p, d))
    pi[:, :k1] = 1.0
    return ModelSpec(
        p=p, d=d, k1=k1, k2=k2, beta_star=beta, pi_star=pi,
        sigma_eps=0.4, sigma_eta=0.4, sigma_z=1.0, rho=rho, row_corr=0.0,
    )


def experiment_spec(experiment_id: int, rho: float = DEFAULT_RHO) -> ExperimentDesign:
    """Resolve one of the 14 catalogued designs.

    rho (the eps/eta correlation) is not part of the published catalogue
    and must be chosen; the documented default is 0.3.
    """
    if experiment_id not in EXPERIMENT_IDS:
        raise UnknownExperiment(
            f"unknown experiment id {experiment_id}; valid ids are 1..14"
        )
    eid = int(experiment_id)
    lasso_both = dict(stage1=StageMethod.LASSO, stage2=StageMethod.LASSO)

    if eid == 1:
        return ExperimentDesign(eid, _base_spec(rho), **lasso_both)
    if eid == 2:
        # Low-dimensional, every coefficient relevant, supports known a
        # priori: classical 2SLS as oracle OLS in both stages.
        p, d = 5, 4
        spec = ModelSpec(
            p=p, d=d, k1=d, k2=p,
            beta_star=np.ones(p), pi_star=np.ones((p, d)),
            sigma_eps=0.4, sigma_eta=0.4, sigma_z=1.0, rho=rho, row_corr=0.0,
        )
        return ExperimentDesign(eid, spec, StageMethod.ORACLE_OLS, StageMethod.ORACLE_OLS)
    if eid == 3:
        return ExperimentDesign(eid, _base_spec(rho), None, StageMethod.LASSO)
    if eid == 4:
        return ExperimentDesign(eid, _base_spec(rho), StageMethod.OLS, StageMethod.LASSO)
    if eid == 5:
        return ExperimentDesign(eid, _base_spec(rho), StageMethod.LASSO, StageMethod.OLS)
    if eid == 6:
        return ExperimentDesign(eid, _base_spec(rho), StageMethod.OLS, StageMethod.OLS)
    if eid in (7, 11):
        spec = replace(_base_spec(rho), sigma_eps=1.0, row_corr=0.5 if eid == 11 else 0.0)
        return ExperimentDesign(eid, spec, **lasso_both)
    if eid in (8, 12):
        spec = replace(_base_spec(rho), sigma_eta=1.0, row_corr=0.5 if eid == 12 else 0.0)
        return ExperimentDesign(eid, spec, **lasso_both)
    if eid in (9, 13):
        spec = replace(_base_spec(rho), sigma_z=0.4, row_corr=0.5 if eid == 13 else 0.0)
        return ExperimentDesign(eid, spec, **lasso_both)
    if eid == 10:
        return ExperimentDesign(eid, replace(_base_spec(rho), row_corr=0.5), **lasso_both)
    # eid == 14: tiny signals; the second-stage penalty factor shrinks with them.
    base = _base_spec(rho)
    beta = base.beta_star * 0.01
    spec = replace(base, beta_star=beta)
    return ExperimentDesign(eid, spec, tuning=TuningRule(stage2_factor=0.001), **lasso_both)


_SCALAR_FIELDS = ("p", "d", "k1", "k2", "sigma_eps", "sigma_eta", "sigma_z", "rho", "row_corr")


def spec_to_config(spec: ModelSpec) -> dict[str, str]:
    """Flat key/value form with numbers as decimal strings.

    Vectors join with commas, the pi* matrix joins rows with semicolons.
    repr() strings round-trip float64 exactly.
    """
    out: dict[str, str] = {}
    for name in _SCALAR_FIELDS:
        value = getattr(spec, name)
        out[name] = repr(int(value)) if name in ("p", "d", "k1", "k2") else repr(float(value))
    out["beta_star"] = ",".join(repr(float(v)) for v in spec.beta_star)
    out["pi_star"] = ";".join(
        ",".join(repr(float(v)) for v in row) for row in spec.pi_star
    )
    return out


def spec_from_config(config: dict[str, str]) -> ModelSpec:
    """Inverse of spec_to_config; raises ConfigError on bad input."""
    missing = {*_SCALAR_FIELDS, "beta_star", "pi_star"} - set(config)
    if missing:
        raise ConfigError(f"spec config is missing fields: {sorted(missing)}")
    try:
        kwargs = {
            name: (int(config[name]) if name in ("p", "d", "k1", "k2") else float(config[name]))
            for name in _SCALAR_FIELDS
        }
        beta = np.array([float(v) for v in config["beta_star"].split(",")])
        pi = np.array(
            [[float(v) for v in row.split(",")] for row in config["pi_star"].split(";")]
        )
    except ValueError as exc:
        raise ConfigError(f"malformed spec config: {exc}") from exc
    return ModelSpec(beta_star=beta, pi_star=pi, **kwargs)
