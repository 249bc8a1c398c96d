"""Two-stage Lasso estimation for sparse linear models with many
endogenous regressors: solvers, data generation, estimator pipelines,
support-recovery diagnostics, and a seeded simulation harness."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    EmptyInput,
    EmptySupport,
    H2SLSError,
    LengthMismatch,
    NonFinite,
    NotPD,
    NumericalError,
    SingularBlock,
    SingularGram,
    UnknownExperiment,
)
from .solver import (
    KERNEL_NAME,
    DesignMatrix,
    LassoConfig,
    LassoSolution,
    kkt_ok,
    kkt_violation,
    lasso_fit,
    lasso_fit_restricted,
    ols_fit,
    soft_threshold,
)
from .datagen import (
    DEFAULT_RHO,
    Dataset,
    ExperimentDesign,
    ModelSpec,
    SeedPolicy,
    experiment_spec,
    generate,
)
from .estimators import (
    FitResult,
    StageMethod,
    TuningRule,
    fit_first_stage,
    fit_h2sls,
    fit_one_step_lasso,
    lambda1_rule,
    lambda2_rule,
)
from .diagnostics import (
    AggregateMetrics,
    DiagnosticsReport,
    ReplicationMetrics,
    aggregate,
    beta_min_margin,
    bound_factors,
    compute_report,
    l2_error,
    l2_error_adjusted,
    mi_quantity,
    pdw_check,
    re_estimate,
    re_grid_oracle,
    replication_metrics,
    selection_bound,
    selection_pct,
)
from .harness import (
    ExperimentConfig,
    ExperimentReport,
    ReplicationRecord,
    emit_comparison,
    emit_report,
    run_experiment,
    run_sensitivity,
)

__all__ = [
    "__version__",
    "H2SLSError",
    "ConfigError",
    "NumericalError",
    "UnknownExperiment",
    "EmptySupport",
    "EmptyInput",
    "LengthMismatch",
    "NonFinite",
    "SingularGram",
    "SingularBlock",
    "NotPD",
    "KERNEL_NAME",
    "DesignMatrix",
    "LassoConfig",
    "LassoSolution",
    "soft_threshold",
    "lasso_fit",
    "lasso_fit_restricted",
    "ols_fit",
    "kkt_violation",
    "kkt_ok",
    "DEFAULT_RHO",
    "ModelSpec",
    "Dataset",
    "SeedPolicy",
    "ExperimentDesign",
    "experiment_spec",
    "generate",
    "StageMethod",
    "TuningRule",
    "FitResult",
    "lambda1_rule",
    "lambda2_rule",
    "fit_first_stage",
    "fit_h2sls",
    "fit_one_step_lasso",
    "ReplicationMetrics",
    "AggregateMetrics",
    "DiagnosticsReport",
    "l2_error",
    "l2_error_adjusted",
    "selection_pct",
    "replication_metrics",
    "aggregate",
    "re_estimate",
    "re_grid_oracle",
    "mi_quantity",
    "pdw_check",
    "bound_factors",
    "selection_bound",
    "beta_min_margin",
    "compute_report",
    "ExperimentConfig",
    "ExperimentReport",
    "ReplicationRecord",
    "run_experiment",
    "run_sensitivity",
    "emit_report",
    "emit_comparison",
]
