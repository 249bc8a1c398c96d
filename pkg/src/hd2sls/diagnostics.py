"""Replication metrics, aggregation, and theory-side diagnostics.

Per-replication metrics (l2 errors, sign-agreement percentages) and their
compensated-summation aggregates feed the simulation harness.  The
diagnostics half computes quantities the estimation theory reasons about:
a sampled restricted-eigenvalue bound, the mutual-incoherence quantity,
the primal-dual-witness certificate, analytic bound factors, and the
beta-min margin.
"""

from __future__ import annotations

from dataclasses import dataclass, replace as dc_replace
from typing import Dict, Iterable, Sequence

import numpy as np

from .errors import EmptyInput, EmptySupport, LengthMismatch, NotPD, SingularBlock
from .solver import RCOND_LIMIT, LassoConfig, gram_rcond, lasso_fit_restricted
from .datagen import ModelSpec


# ---------------------------------------------------------------------------
# per-replication metrics

def _as_pair(beta_hat: np.ndarray, beta_star: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    bh = np.asarray(beta_hat, dtype=np.float64).ravel()
    bs = np.asarray(beta_star, dtype=np.float64).ravel()
    if bh.shape != bs.shape:
        raise LengthMismatch(
            f"estimate has length {bh.size}, truth has length {bs.size}"
        )
    return bh, bs


def l2_error(beta_hat: np.ndarray, beta_star: np.ndarray) -> float:
    """Euclidean distance between an estimate and the true vector."""
    bh, bs = _as_pair(beta_hat, beta_star)
    return float(np.linalg.norm(bh - bs))


def l2_error_adjusted(beta_hat: np.ndarray, beta_star: np.ndarray) -> float:
    """l2 error with each on-support coordinate scaled by 1/|beta*_j|.

    Off-support coordinates contribute their raw error.  Useful when the
    relevant coefficients are tiny and raw l2 error understates how badly
    they were missed.
    """
    bh, bs = _as_pair(beta_hat, beta_star)
    diff = bh - bs
    on = bs != 0.0
    scaled = np.where(on, diff / np.where(on, bs, 1.0), diff)
    return float(np.linalg.norm(scaled))


def selection_pct(beta_hat: np.ndarray, beta_star: np.ndarray) -> float:
    """Percentage of coordinates whose sign matches the truth.

    sign(0) = 0, so an exact zero only matches a true zero.  The
    denominator is the full length p.
    """
    bh, bs = _as_pair(beta_hat, beta_star)
    return float(100.0 * np.mean(np.sign(bh) == np.sign(bs)))


@dataclass(frozen=True)
class ReplicationMetrics:
    """Per-replication summary of a fitted second stage (and first stage)."""

    l2_error: float
    l2_error_sq: float
    select_pct: float
    stage1_l2_avg: float | None
    stage1_select_pct_avg: float | None
    zero_flags: np.ndarray  # boolean, one entry per relevant coordinate

    def __post_init__(self) -> None:
        if abs(self.l2_error_sq - self.l2_error**2) > 1e-12 * max(1.0, self.l2_error_sq):
            raise ValueError("l2_error_sq must equal l2_error squared")


def replication_metrics(
    beta_hat: np.ndarray,
    beta_star: np.ndarray,
    pi_hat: np.ndarray | None = None,
    pi_star: np.ndarray | None = None,
) -> ReplicationMetrics:
    """Compute the standard metric set for one replication.

    Stage-1 averages are taken over the p first-stage equations; they are
    None when the pipeline had no first stage.
    """
    err = l2_error(beta_hat, beta_star)
    support = np.flatnonzero(np.asarray(beta_star) != 0.0)
    zero_flags = np.asarray(beta_hat)[support] == 0.0
    s1_l2 = s1_sel = None
    if pi_hat is not None:
        if pi_star is None or pi_hat.shape != pi_star.shape:
            raise LengthMismatch("pi_hat and pi_star shapes must agree")
        s1_l2 = float(np.mean(np.linalg.norm(pi_hat - pi_star, axis=1)))
        s1_sel = float(
            np.mean(
                [selection_pct(pi_hat[j], pi_star[j]) for j in range(pi_star.shape[0])]
            )
        )
    return ReplicationMetrics(
        l2_error=err,
        l2_error_sq=err**2,
        select_pct=selection_pct(beta_hat, beta_star),
        stage1_l2_avg=s1_l2,
        stage1_select_pct_avg=s1_sel,
        zero_flags=zero_flags,
    )


# ---------------------------------------------------------------------------
# aggregation

PERCENTILE_LEVELS = (5, 50, 95)


@dataclass(frozen=True)
class AggregateMetrics:
    mean_l2: float
    smse: float
    squared_bias: float
    mean_select_pct: float
    percentiles: Dict[int, np.ndarray]  # level -> per-coordinate values
    zero_counts: np.ndarray  # per relevant coordinate


def _neumaier_sum(values: Iterable[float]) -> float:
    # Compensated summation; the running order is the caller's record order,
    # so sorted inputs give bit-identical results regardless of how the
    # records were produced.
    total = 0.0
    comp = 0.0
    for v in values:
        t = total + v
        if abs(total) >= abs(v):
            comp += (total - t) + v
        else:
            comp += (v - t) + total
        total = t
    return total + comp


def _neumaier_column_sums(rows: np.ndarray) -> np.ndarray:
    total = np.zeros(rows.shape[1])
    comp = np.zeros(rows.shape[1])
    for row in rows:
        t = total + row
        comp += np.where(np.abs(total) >= np.abs(row), (total - t) + row, (row - t) + total)
        total = t
    return total + comp


def _nearest_rank(sorted_column: np.ndarray, level: int) -> float:
    n = sorted_column.shape[0]
    rank = int(np.ceil(level * n / 100.0))
    rank = min(max(rank, 1), n)
    return float(sorted_column[rank - 1])


def aggregate(
    metrics: Sequence[ReplicationMetrics],
    estimates: Sequence[np.ndarray],
    beta_star: np.ndarray,
) -> AggregateMetrics:
    """Aggregate replication metrics and raw estimates.

    Means use compensated summation; percentiles use the nearest-rank
    convention per coordinate; squared bias compares per-coordinate means
    against the truth.
    """
    if len(metrics) == 0 or len(estimates) == 0:
        raise EmptyInput("aggregate requires at least one replication")
    if len(metrics) != len(estimates):
        raise LengthMismatch(
            f"{len(metrics)} metric records vs {len(estimates)} estimates"
        )
    bs = np.asarray(beta_star, dtype=np.float64).ravel()
    stack = np.asarray(estimates, dtype=np.float64)
    if stack.ndim != 2 or stack.shape[1] != bs.size:
        raise LengthMismatch("estimates must all have the same length as beta_star")
    n_rep = stack.shape[0]

    mean_l2 = _neumaier_sum(m.l2_error for m in metrics) / n_rep
    smse = _neumaier_sum(m.l2_error_sq for m in metrics) / n_rep
    mean_sel = _neumaier_sum(m.select_pct for m in metrics) / n_rep

    coord_means = _neumaier_column_sums(stack) / n_rep
    squared_bias = float(np.sum((coord_means - bs) ** 2))

    sorted_cols = np.sort(stack, axis=0)
    percentiles = {
        level: np.array([_nearest_rank(sorted_cols[:, j], level) for j in range(bs.size)])
        for level in PERCENTILE_LEVELS
    }

    support = np.flatnonzero(bs != 0.0)
    zero_counts = np.zeros(support.size, dtype=np.int64)
    for m in metrics:
        flags = np.asarray(m.zero_flags, dtype=bool)
        if flags.size != support.size:
            raise LengthMismatch("zero_flags length differs across replications")
        zero_counts += flags
    return AggregateMetrics(
        mean_l2=float(mean_l2),
        smse=float(smse),
        squared_bias=squared_bias,
        mean_select_pct=float(mean_sel),
        percentiles=percentiles,
        zero_counts=zero_counts,
    )


# ---------------------------------------------------------------------------
# restricted eigenvalue

def _check_gram(gram: np.ndarray) -> np.ndarray:
    G = np.asarray(gram, dtype=np.float64)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise LengthMismatch("gram must be square")
    if not np.allclose(G, G.T, atol=1e-10 * max(1.0, float(np.abs(G).max()))):
        raise LengthMismatch("gram must be symmetric")
    return (G + G.T) / 2.0


def _support_indices(S: Sequence[int], m: int) -> np.ndarray:
    idx = sorted({int(j) for j in list(S)})
    if not idx:
        raise EmptySupport("restricted eigenvalue needs a nonempty support")
    if idx[0] < 0 or idx[-1] >= m:
        raise LengthMismatch(f"support indices out of range for size {m}")
    return np.asarray(idx, dtype=np.intp)


def re_estimate(
    gram: np.ndarray,
    S: Sequence[int],
    gamma: float,
    samples: int,
    seed: int | np.random.Generator = 0,
) -> float:
    """Sampled upper bound on the restricted eigenvalue over C(S; gamma).

    Directions are drawn with v_S uniform on the unit sphere of the support
    and the off-support block on a random l1 sphere of radius
    u * gamma * |v_S|_1, u ~ uniform(0,1), which covers the cone's interior
    and boundary.  The reported minimum of the Rayleigh quotients is an
    upper bound for the true restricted eigenvalue; it approaches it from
    above as samples grow.
    """
    G = _check_gram(gram)
    m = G.shape[0]
    idx = _support_indices(S, m)
    comp = np.setdiff1d(np.arange(m), idx)
    if gamma < 1.0:
        raise ValueError("gamma must be at least 1")
    if samples <= 0:
        raise ValueError("samples must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    best = np.inf
    chunk = 20_000
    remaining = int(samples)
    while remaining > 0:
        k = min(chunk, remaining)
        remaining -= k
        v = np.zeros((k, m))
        vs = rng.standard_normal((k, idx.size))
        vs /= np.linalg.norm(vs, axis=1, keepdims=True)
        v[:, idx] = vs
        if comp.size:
            # Exponential magnitudes normalized to the l1 sphere give a
            # uniform direction there; the radius scales the cone bound.
            mag = rng.standard_exponential((k, comp.size))
            mag /= mag.sum(axis=1, keepdims=True)
            signs = rng.integers(0, 2, size=(k, comp.size)) * 2 - 1
            radius = rng.uniform(0.0, 1.0, size=(k, 1)) * gamma * np.abs(vs).sum(
                axis=1, keepdims=True
            )
            v[:, comp] = radius * mag * signs
        quad = np.einsum("ij,jl,il->i", v, G, v)
        norms = np.einsum("ij,ij->i", v, v)
        best = min(best, float(np.min(quad / norms)))
    return best


def _compositions(total: int, parts: int) -> np.ndarray:
    """All nonnegative integer vectors of given length summing to total."""
    if parts == 1:
        return np.array([[total]], dtype=np.int64)
    rows = []
    for first in range(total + 1):
        rest = _compositions(total - first, parts - 1)
        rows.append(np.hstack([np.full((rest.shape[0], 1), first), rest]))
    return np.vstack(rows)


def _l1_sphere_grid(q: int, resolution: int) -> np.ndarray:
    """Grid over the l1 unit sphere in R^q: compositions times sign patterns."""
    comps = _compositions(resolution, q) / float(resolution)
    points = [comps]
    for bit in range(1, 2**q):
        signs = np.array([1.0 if (bit >> i) & 1 == 0 else -1.0 for i in range(q)])
        points.append(comps * signs)
    grid = np.unique(np.vstack(points), axis=0)
    return grid


def _support_direction_grid(s: int, steps: int) -> np.ndarray:
    if s == 1:
        return np.array([[1.0], [-1.0]])
    theta = np.linspace(0.0, 2.0 * np.pi, steps, endpoint=False)
    return np.column_stack([np.cos(theta), np.sin(theta)])


def _rayleigh_min_over_tau(
    A: np.ndarray, B: np.ndarray, C: np.ndarray, D: np.ndarray, tau_max: np.ndarray
) -> np.ndarray:
    """Minimize (A + 2B t + C t^2) / (1 + D t^2) over t in [0, tau_max].

    Stationary points solve -B D t^2 + (C - A D) t + B = 0; endpoints are
    always candidates.  All arguments broadcast elementwise.
    """
    candidates = [np.zeros_like(tau_max), tau_max]
    a_q = -B * D
    b_q = C - A * D
    c_q = B
    disc = b_q**2 - 4.0 * a_q * c_q
    ok = disc >= 0.0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        for sign in (1.0, -1.0):
            root = np.where(
                np.abs(a_q) > 1e-300, (-b_q + sign * sq) / (2.0 * a_q), -c_q / np.where(np.abs(b_q) > 1e-300, b_q, 1.0)
            )
            root = np.where(ok, root, 0.0)
            candidates.append(np.clip(root, 0.0, tau_max))
    best = np.full(tau_max.shape, np.inf)
    for t in candidates:
        val = (A + 2.0 * B * t + C * t**2) / (1.0 + D * t**2)
        best = np.minimum(best, val)
    return best


def re_grid_oracle(
    gram: np.ndarray,
    S: Sequence[int],
    gamma: float,
    resolution: int = 12,
    angle_steps: int = 180,
    refine_rounds: int = 3,
) -> float:
    """Exhaustive-grid minimum of the Rayleigh quotient over C(S; gamma).

    Intended as a test oracle for small problems (|S| <= 2, dimension <= 6).
    For each support direction a and off-support l1-sphere direction b the
    one-dimensional problem in the cone-mixing parameter is solved exactly,
    so the grid only discretizes (a, b).  Refinement rounds shrink the grid
    around the incumbent to tighten the minimum.
    """
    G = _check_gram(gram)
    m = G.shape[0]
    idx = _support_indices(S, m)
    if idx.size > 2 or m > 6:
        raise ValueError("grid oracle supports |S| <= 2 and dimension <= 6")
    comp = np.setdiff1d(np.arange(m), idx)
    G_ss = G[np.ix_(idx, idx)]
    if comp.size == 0:
        # Pure support cone: minimum Rayleigh quotient on the subspace.
        return float(np.linalg.eigvalsh(G_ss)[0])
    G_sc = G[np.ix_(idx, comp)]
    G_cc = G[np.ix_(comp, comp)]

    a_grid = _support_direction_grid(idx.size, angle_steps)
    b_grid = _l1_sphere_grid(comp.size, resolution)

    def grid_min(a_dirs: np.ndarray, b_dirs: np.ndarray):
        A = np.einsum("ki,ij,kj->k", a_dirs, G_ss, a_dirs)
        C = np.einsum("ki,ij,kj->k", b_dirs, G_cc, b_dirs)
        D = np.einsum("ki,ki->k", b_dirs, b_dirs)
        B = a_dirs @ G_sc @ b_dirs.T
        tau_max = gamma * np.abs(a_dirs).sum(axis=1)
        vals = _rayleigh_min_over_tau(
            A[:, None], B, C[None, :], D[None, :], np.broadcast_to(tau_max[:, None], B.shape)
        )
        flat = int(np.argmin(vals))
        ai, bi = np.unravel_index(flat, vals.shape)
        return float(vals[ai, bi]), a_dirs[ai], b_dirs[bi]

    best, a_best, b_best = grid_min(a_grid, b_grid)
    for _ in range(refine_rounds):
        a_local = _refine_directions(a_best, a_grid)
        b_local = _refine_l1(b_best, resolution)
        val, a_best, b_best = grid_min(a_local, b_local)
        best = min(best, val)
    return best


def _refine_directions(center: np.ndarray, coarse: np.ndarray) -> np.ndarray:
    if center.size == 1:
        return np.array([[1.0], [-1.0]])
    theta0 = float(np.arctan2(center[1], center[0]))
    spread = 2.0 * np.pi / coarse.shape[0]
    theta = theta0 + np.linspace(-spread, spread, 81)
    return np.column_stack([np.cos(theta), np.sin(theta)])


def _refine_l1(center: np.ndarray, resolution: int) -> np.ndarray:
    # Local perturbations on the l1 sphere around the incumbent direction,
    # re-normalized; duplicates are harmless.
    steps = np.linspace(-1.5 / resolution, 1.5 / resolution, 7)
    out = [center]
    q = center.size
    for i in range(q):
        for s in steps:
            p = center.copy()
            p[i] += s
            norm = np.abs(p).sum()
            if norm > 1e-12:
                out.append(p / norm)
    return np.unique(np.vstack(out), axis=0)


# ---------------------------------------------------------------------------
# mutual incoherence and the primal-dual witness

def mi_quantity(gram: np.ndarray, K: Sequence[int]) -> float:
    """Mutual-incoherence quantity ||G_KK^{-1} G_{K,K^c}||_inf.

    Zero when the off-support block is orthogonal to the support block;
    values approaching or exceeding 1 signal that irrelevant columns can
    mimic relevant ones.  Invariant under positive rescaling of the gram.
    """
    G = _check_gram(gram)
    m = G.shape[0]
    idx = _support_indices(K, m)
    comp = np.setdiff1d(np.arange(m), idx)
    if comp.size == 0:
        return 0.0
    G_kk = G[np.ix_(idx, idx)]
    sv = np.linalg.svd(G_kk, compute_uv=False)
    if sv[0] == 0.0 or sv[-1] / sv[0] < RCOND_LIMIT:
        raise SingularBlock(f"gram block on K is singular (size {idx.size})")
    cross = np.linalg.solve(G_kk, G[np.ix_(idx, comp)])
    return float(np.max(np.abs(cross).sum(axis=1)))


def pdw_check(
    x_hat: np.ndarray,
    y: np.ndarray,
    lam: float,
    K: Sequence[int],
    cfg: LassoConfig | None = None,
) -> tuple[bool, float, np.ndarray]:
    """Primal-dual witness certificate for support recovery at penalty lam.

    Solves the lasso restricted to K, extends the dual to the complement as
    mu = x_hat_{K^c}' r / (n lam) with r the restricted-fit residual, and
    reports success iff strict dual feasibility max|mu| < 1 holds.  On
    success the restricted solution padded with zeros is the unique lasso
    solution, so its support is contained in K.
    """
    X = np.asarray(x_hat, dtype=np.float64)
    yv = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or X.shape[0] != yv.size:
        raise LengthMismatch("x_hat rows must match y length")
    if lam <= 0.0:
        raise ValueError("lam must be positive")
    n, m = X.shape
    idx = _support_indices(K, m)
    if gram_rcond(X[:, idx]) < RCOND_LIMIT:
        raise SingularBlock(f"restricted gram on K is singular (size {idx.size})")
    base = cfg or LassoConfig(lam=lam)
    sol = lasso_fit_restricted(X, yv, idx, dc_replace(base, lam=lam))
    residual = yv - X @ sol.beta
    comp = np.setdiff1d(np.arange(m), idx)
    if comp.size == 0:
        return True, 0.0, sol.beta
    mu = X[:, comp].T @ residual / (n * lam)
    mu_max = float(np.max(np.abs(mu)))
    return mu_max < 1.0, mu_max, sol.beta


# ---------------------------------------------------------------------------
# analytic bound factors

def xstar_cov(spec: ModelSpec) -> np.ndarray:
    """Population covariance of the instrumented regressors x*.

    With the block instrument design, cov(x*_j, x*_j') is sigma_z^2 times
    pi_j' pi_j' scaled by the row correlation off the diagonal.
    """
    pi = np.asarray(spec.pi_star, dtype=np.float64)
    outer = pi @ pi.T
    r = spec.row_corr
    sz2 = spec.sigma_z**2
    return sz2 * ((1.0 - r) * np.diag(np.diag(outer)) + r * outer)


def instrument_cov_min_eig(spec: ModelSpec) -> float:
    # The full instrument covariance is a d-fold block diagonal of p-by-p
    # equicorrelation blocks, whose smallest eigenvalue is sigma_z^2 (1 - r).
    return spec.sigma_z**2 * (1.0 - spec.row_corr)


def bound_factors(spec: ModelSpec) -> tuple[float, float]:
    """Analytic bound factors (phi1, phi2) for the two-stage error bounds.

    phi1 scales the first-stage error propagation; phi2 the second-stage
    noise.  Both are built from population covariances implied by the spec;
    the sub-Gaussian scale of x* is proxied by sqrt(lambda_max(Sigma_x*)).
    """
    sigma_x = xstar_cov(spec)
    eigs = np.linalg.eigvalsh(sigma_x)
    lam_min_x = float(eigs[0])
    lam_max_x = float(eigs[-1])
    if lam_min_x <= 0.0:
        raise NotPD("population covariance of x* is singular for this spec")
    lam_min_z = instrument_cov_min_eig(spec)
    beta_l1 = float(np.abs(spec.beta_star).sum())
    # cov(x*_j', z_jl) = sigma_z^2 pi*_{j'l} (1 if j = j' else row_corr);
    # its max absolute entry over (j, j') is sigma_z^2 max|pi*|.
    max_cov = spec.sigma_z**2 * float(np.abs(spec.pi_star).max())
    sigma_xstar = np.sqrt(lam_max_x)
    phi1 = spec.sigma_eta * max_cov * beta_l1 / (lam_min_z * lam_min_x)
    phi2 = max(sigma_xstar * spec.sigma_eta * beta_l1, sigma_xstar * spec.sigma_eps) / lam_min_x
    return float(phi1), float(phi2)


def selection_bound(spec: ModelSpec, n: int, constant: float = 1.0) -> float:
    """Selection-consistency error bound, up to the unspecified constant.

    The max of the two bound branches: first-stage propagation scaled by
    phi1 k1, and second-stage noise scaled by phi2.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    phi1, phi2 = bound_factors(spec)
    d_or_p = max(spec.d, spec.p)
    first = phi1 * spec.k1 * np.sqrt(spec.k2 * np.log(d_or_p) / n)
    second = phi2 * np.sqrt(spec.k2 * np.log(spec.p) / n)
    return float(constant * max(first, second))


def beta_min_margin(spec: ModelSpec, bound: float) -> float:
    """min_j |beta*_j| over the support, minus the error bound.

    Positive margins predict no false exclusions; negative margins predict
    the zeroed-out relevant coefficients seen in weak-signal designs.
    """
    if bound < 0.0:
        raise ValueError("bound must be nonnegative")
    support = np.flatnonzero(spec.beta_star != 0.0)
    if support.size == 0:
        raise EmptySupport("beta* has no relevant coordinates")
    return float(np.min(np.abs(spec.beta_star[support])) - bound)


# ---------------------------------------------------------------------------
# combined report

@dataclass(frozen=True)
class DiagnosticsReport:
    re_estimate: float
    mi_quantity: float
    pdw_success: bool
    pdw_mu_max: float
    phi1: float
    phi2: float
    beta_min_margin: float

    def __post_init__(self) -> None:
        if self.pdw_success != (self.pdw_mu_max < 1.0):
            raise ValueError("pdw_success must equal (pdw_mu_max < 1)")


def compute_report(
    x_hat: np.ndarray,
    y: np.ndarray,
    lam2: float,
    spec: ModelSpec,
    n: int,
    gamma: float = 3.0,
    re_samples: int = 2000,
    seed: int = 0,
    bound_constant: float = 1.0,
) -> DiagnosticsReport:
    """Assemble the full diagnostics report for one fitted replication.

    The empirical second-stage gram drives the RE and MI quantities and the
    PDW certificate; the bound factors and beta-min margin are analytic
    properties of the spec.
    """
    X = np.asarray(x_hat, dtype=np.float64)
    gram = X.T @ X / X.shape[0]
    support = spec.support()
    re_val = re_estimate(gram, support, gamma, re_samples, seed)
    mi_val = mi_quantity(gram, support)
    success, mu_max, _ = pdw_check(X, y, lam2, support)
    phi1, phi2 = bound_factors(spec)
    margin = beta_min_margin(spec, selection_bound(spec, n, bound_constant))
    return DiagnosticsReport(
        re_estimate=re_val,
        mi_quantity=mi_val,
        pdw_success=success,
        pdw_mu_max=mu_max,
        phi1=phi1,
        phi2=phi2,
        beta_min_margin=margin,
    )
