"""Experiment driver: seeded replications, aggregation, report emission.

One run resolves a catalogued design (or a custom one), executes the
configured number of replications with per-replication RNG streams, and
aggregates. Replications are independent, so the pool parallelizes over
them; records are merged in replication order, which keeps the compensated
aggregate reduction identical to the serial one.

Emitted reports are machine-readable: a per-replication CSV plus an
aggregate CSV (or one JSON file carrying both). Numeric output is rounded
to 6 significant digits; timings live only in JSON metadata so CSV output
is bit-reproducible.
"""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import __version__
from .datagen import (
    NORMAL_METHOD,
    RNG_IDENTITY,
    Dataset,
    ExperimentDesign,
    ModelSpec,
    SeedPolicy,
    experiment_spec,
    generate,
    spec_to_config,
)
from .diagnostics import (
    AggregateMetrics,
    DiagnosticsReport,
    ReplicationMetrics,
    aggregate,
    compute_report,
    l2_error_adjusted,
    replication_metrics,
)
from .errors import ConfigError, H2SLSError
from .estimators import FitResult, StageMethod, TuningRule, fit_h2sls, fit_one_step_lasso
from .solver import KERNEL_NAME

CUSTOM = "CUSTOM"


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one experiment run.

    tuning of None means the design's own rule (experiment 14 carries a
    non-default one); an explicit TuningRule replaces it. custom_design
    must be provided exactly when experiment_id is CUSTOM.
    """

    experiment_id: int | str
    n: int
    replications: int
    master_seed: int
    rho: float
    tuning: TuningRule | None = None
    parallelism: int = 1
    custom_design: ExperimentDesign | None = None

    def __post_init__(self) -> None:
        if self.experiment_id != CUSTOM and self.experiment_id not in range(1, 15):
            raise ConfigError(
                f"experiment_id must be 1..14 or {CUSTOM!r}, got {self.experiment_id!r}"
            )
        if (self.experiment_id == CUSTOM) != (self.custom_design is not None):
            raise ConfigError("custom_design is required iff experiment_id is CUSTOM")
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if self.replications < 1:
            raise ConfigError(f"replications must be >= 1, got {self.replications}")
        if not (0 <= self.master_seed < 2**64):
            raise ConfigError(f"master_seed must fit in 64 bits, got {self.master_seed}")
        if self.parallelism < 1:
            raise ConfigError(f"parallelism must be >= 1, got {self.parallelism}")


@dataclass(frozen=True)
class ReplicationRecord:
    """One CSV row: the metric set for a single replication."""

    experiment: int | str
    rep: int
    n: int
    l2_error: float
    l2_error_adj: float
    select_pct: float
    stage1_l2_avg: float | None
    stage1_select_pct: float | None
    converged: bool


@dataclass(frozen=True)
class Stage1Aggregate:
    mean_l2: float
    mean_select_pct: float


@dataclass(frozen=True)
class ExperimentReport:
    config: ExperimentConfig
    design: ExperimentDesign
    records: list[ReplicationRecord]
    aggregate: AggregateMetrics
    stage1: Stage1Aggregate | None
    diagnostics: DiagnosticsReport | None
    metadata: dict


def resolve_design(cfg: ExperimentConfig) -> ExperimentDesign:
    """The design the config names, with any tuning override applied."""
    if cfg.experiment_id == CUSTOM:
        design = cfg.custom_design
    else:
        design = experiment_spec(int(cfg.experiment_id), cfg.rho)
    if cfg.tuning is not None:
        design = replace(design, tuning=cfg.tuning)
    if design.stage1 is StageMethod.OLS and cfg.n < design.spec.d:
        raise ConfigError(
            f"OLS first stage needs n >= d, got n={cfg.n} < d={design.spec.d}"
        )
    return design


def _fit_design(design: ExperimentDesign, data: Dataset) -> FitResult:
    if design.one_step:
        return fit_one_step_lasso(data, design.tuning, design.spec)
    return fit_h2sls(data, design.tuning, design.stage1, design.stage2, design.spec)


def _run_replication(
    design: ExperimentDesign, n: int, master_seed: int, rep: int, experiment_id
) -> tuple[ReplicationRecord, ReplicationMetrics, np.ndarray, float, float]:
    spec = design.spec
    t0 = time.perf_counter()
    data = generate(spec, n, SeedPolicy(master_seed, rep))
    t1 = time.perf_counter()
    fit = _fit_design(design, data)
    t2 = time.perf_counter()
    metrics = replication_metrics(
        fit.beta_hat,
        spec.beta_star,
        fit.pi_hat,
        spec.pi_star if fit.pi_hat is not None else None,
    )
    record = ReplicationRecord(
        experiment=experiment_id,
        rep=rep,
        n=n,
        l2_error=metrics.l2_error,
        l2_error_adj=l2_error_adjusted(fit.beta_hat, spec.beta_star),
        select_pct=metrics.select_pct,
        stage1_l2_avg=metrics.stage1_l2_avg,
        stage1_select_pct=metrics.stage1_select_pct_avg,
        converged=fit.converged,
    )
    return record, metrics, np.asarray(fit.beta_hat), t1 - t0, t2 - t1


# Worker-process state, installed once per worker by the pool initializer
# so the design is not re-pickled for every replication.
_POOL_ARGS: tuple | None = None


def _pool_init(design: ExperimentDesign, n: int, master_seed: int, experiment_id) -> None:
    global _POOL_ARGS
    _POOL_ARGS = (design, n, master_seed, experiment_id)


def _pool_task(rep: int):
    design, n, master_seed, experiment_id = _POOL_ARGS
    try:
        return _run_replication(design, n, master_seed, rep, experiment_id)
    except H2SLSError as exc:
        raise type(exc)(f"experiment {experiment_id}, replication {rep}: {exc}") from exc


def run_experiment(
    cfg: ExperimentConfig,
    with_diagnostics: bool = False,
    diagnostics_rep: int = 0,
) -> ExperimentReport:
    """Run all replications of one experiment and aggregate.

    Failed-convergence replications are kept (flagged, never resampled).
    Errors raised during generation or fitting are re-raised with the
    (experiment, replication) pair in the message.
    """
    start = time.perf_counter()
    design = resolve_design(cfg)
    eid = cfg.experiment_id
    results = []
    if cfg.parallelism == 1:
        for rep in range(cfg.replications):
            try:
                results.append(_run_replication(design, cfg.n, cfg.master_seed, rep, eid))
            except H2SLSError as exc:
                raise type(exc)(
                    f"experiment {eid}, replication {rep}: {exc}"
                ) from exc
    else:
        with ProcessPoolExecutor(
            max_workers=cfg.parallelism,
            initializer=_pool_init,
            initargs=(design, cfg.n, cfg.master_seed, eid),
        ) as pool:
            chunk = max(1, cfg.replications // (4 * cfg.parallelism))
            results = list(pool.map(_pool_task, range(cfg.replications), chunksize=chunk))
    # Replication order is the reduction order; pool.map already preserves
    # it, which makes parallel aggregates match serial ones exactly.
    records = [r[0] for r in results]
    metrics = [r[1] for r in results]
    estimates = [r[2] for r in results]
    gen_s = sum(r[3] for r in results)
    fit_s = sum(r[4] for r in results)

    agg = aggregate(metrics, estimates, design.spec.beta_star)
    stage1 = None
    if not design.one_step:
        stage1 = Stage1Aggregate(
            mean_l2=float(np.mean([m.stage1_l2_avg for m in metrics])),
            mean_select_pct=float(np.mean([m.stage1_select_pct_avg for m in metrics])),
        )

    diag = None
    if with_diagnostics:
        if not (0 <= diagnostics_rep < cfg.replications):
            raise ConfigError(
                f"diagnostics replication {diagnostics_rep} out of range"
            )
        data = generate(design.spec, cfg.n, SeedPolicy(cfg.master_seed, diagnostics_rep))
        fit = _fit_design(design, data)
        x_mat = fit.x_hat if fit.x_hat is not None else data.X
        diag = compute_report(
            x_mat, data.y, fit.lambda2, design.spec, cfg.n, seed=cfg.master_seed
        )

    metadata = {
        "experiment": eid,
        "n": cfg.n,
        "replications": cfg.replications,
        "master_seed": cfg.master_seed,
        "rho": cfg.rho,
        "parallelism": cfg.parallelism,
        "stage1": design.stage1.name if design.stage1 is not None else None,
        "stage2": design.stage2.name,
        "tuning": {
            "stage1_factor": design.tuning.stage1_factor,
            "stage2_factor": design.tuning.stage2_factor,
            "override_lambda1": design.tuning.override_lambda1,
            "override_lambda2": design.tuning.override_lambda2,
        },
        "spec": spec_to_config(design.spec),
        "rng": RNG_IDENTITY,
        "normal_method": NORMAL_METHOD,
        "numpy_version": np.__version__,
        "kernel": KERNEL_NAME,
        "version": __version__,
        "wall_time_s": {
            "generate": gen_s,
            "fit": fit_s,
            "total": time.perf_counter() - start,
        },
    }
    return ExperimentReport(
        config=cfg,
        design=design,
        records=records,
        aggregate=agg,
        stage1=stage1,
        diagnostics=diag,
        metadata=metadata,
    )


def run_sensitivity(
    ids: list[int],
    n: int,
    reps: int,
    seed: int,
    rho: float,
    parallelism: int = 1,
) -> list[ExperimentReport]:
    """Run several designs at shared (n, reps, seed) for side-by-side rows."""
    reports = []
    for eid in ids:
        cfg = ExperimentConfig(
            experiment_id=eid,
            n=n,
            replications=reps,
            master_seed=seed,
            rho=rho,
            parallelism=parallelism,
        )
        reports.append(run_experiment(cfg))
    return reports


# ---------------------------------------------------------------------------
# emission

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def _round6(value: float | None) -> float | None:
    if value is None:
        return None
    return float(f"{value:.6g}")


RECORD_HEADER = (
    "experiment,rep,n,l2_error,l2_error_adj,select_pct,"
    "stage1_l2_avg,stage1_select_pct,converged"
)

AGG_HEADER = (
    "experiment,n,replications,mean_l2,smse,squared_bias,mean_select_pct,"
    "stage1_mean_l2,stage1_mean_select_pct,"
    "p5_b5,p50_b5,p95_b5,p5_b6,p50_b6,p95_b6,zero_counts"
)


def tracked_coordinates(spec: ModelSpec) -> dict[str, int | None]:
    """Coordinates whose percentiles the aggregate rows carry.

    b5 is the last relevant coordinate, b6 the first irrelevant one (None
    when every coordinate is relevant).
    """
    support = spec.support()
    off = np.setdiff1d(np.arange(spec.p), support)
    return {
        "b5": int(support[-1]) if support.size else None,
        "b6": int(off[0]) if off.size else None,
    }


def _record_row(record: ReplicationRecord) -> list[str]:
    return [
        _fmt(record.experiment),
        _fmt(record.rep),
        _fmt(record.n),
        _fmt(record.l2_error),
        _fmt(record.l2_error_adj),
        _fmt(record.select_pct),
        _fmt(record.stage1_l2_avg),
        _fmt(record.stage1_select_pct),
        _fmt(record.converged),
    ]


def _agg_row(report: ExperimentReport) -> list[str]:
    agg = report.aggregate
    tracked = tracked_coordinates(report.design.spec)
    cells = [
        _fmt(report.config.experiment_id),
        _fmt(report.config.n),
        _fmt(report.config.replications),
        _fmt(agg.mean_l2),
        _fmt(agg.smse),
        _fmt(agg.squared_bias),
        _fmt(agg.mean_select_pct),
        _fmt(report.stage1.mean_l2 if report.stage1 else None),
        _fmt(report.stage1.mean_select_pct if report.stage1 else None),
    ]
    for name in ("b5", "b6"):
        idx = tracked[name]
        for level in (5, 50, 95):
            cells.append(_fmt(float(agg.percentiles[level][idx]) if idx is not None else None))
    cells.append(";".join(str(int(c)) for c in agg.zero_counts))
    return cells


def _agg_json(report: ExperimentReport) -> dict:
    agg = report.aggregate
    tracked = tracked_coordinates(report.design.spec)
    percentiles = {
        str(level): {
            name: (_round6(float(agg.percentiles[level][idx])) if idx is not None else None)
            for name, idx in tracked.items()
        }
        for level in (5, 50, 95)
    }
    return {
        "mean_l2": _round6(agg.mean_l2),
        "smse": _round6(agg.smse),
        "squared_bias": _round6(agg.squared_bias),
        "mean_select_pct": _round6(agg.mean_select_pct),
        "stage1_mean_l2": _round6(report.stage1.mean_l2) if report.stage1 else None,
        "stage1_mean_select_pct": (
            _round6(report.stage1.mean_select_pct) if report.stage1 else None
        ),
        "tracked": tracked,
        "percentiles": percentiles,
        "zero_counts": [int(c) for c in agg.zero_counts],
    }


def _diag_json(diag: DiagnosticsReport | None) -> dict | None:
    if diag is None:
        return None
    return {
        "re_estimate": _round6(diag.re_estimate),
        "mi_quantity": _round6(diag.mi_quantity),
        "pdw_success": diag.pdw_success,
        "pdw_mu_max": _round6(diag.pdw_mu_max),
        "phi1": _round6(diag.phi1),
        "phi2": _round6(diag.phi2),
        "beta_min_margin": _round6(diag.beta_min_margin),
    }


def agg_path_for(path: str) -> str:
    stem, ext = os.path.splitext(path)
    return f"{stem}.agg{ext or '.csv'}"


def emit_report(report: ExperimentReport, format: str, path: str) -> None:
    """Write the report: CSV writes <path> plus <stem>.agg<ext>; JSON one file.

    CSV output carries no timings, so identical configs give identical
    files byte for byte.
    """
    fmt = format.lower()
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(RECORD_HEADER.split(","))
            for record in report.records:
                writer.writerow(_record_row(record))
        with open(agg_path_for(path), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(AGG_HEADER.split(","))
            writer.writerow(_agg_row(report))
        return
    if fmt == "json":
        payload = {
            "metadata": report.metadata,
            "records": [
                {
                    "experiment": r.experiment,
                    "rep": r.rep,
                    "n": r.n,
                    "l2_error": _round6(r.l2_error),
                    "l2_error_adj": _round6(r.l2_error_adj),
                    "select_pct": _round6(r.select_pct),
                    "stage1_l2_avg": _round6(r.stage1_l2_avg),
                    "stage1_select_pct": _round6(r.stage1_select_pct),
                    "converged": r.converged,
                }
                for r in report.records
            ],
            "aggregate": _agg_json(report),
            "diagnostics": _diag_json(report.diagnostics),
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1)
            fh.write("\n")
        return
    raise ConfigError(f"unknown report format {format!r}; use csv or json")


def emit_comparison(reports: list[ExperimentReport], path: str) -> None:
    """One aggregate row per report, same schema as the .agg.csv file."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(AGG_HEADER.split(","))
        for report in reports:
            writer.writerow(_agg_row(report))


def comparison_json(reports: list[ExperimentReport]) -> list[dict]:
    """JSON mirror of the comparison table, one entry per report."""
    return [{"metadata": r.metadata, "aggregate": _agg_json(r)} for r in reports]
