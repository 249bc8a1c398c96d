"""Command-line front end.

Three subcommands: ``run`` executes one experiment and writes a report,
``sweep`` runs several designs at shared settings and writes a comparison
table, ``spec`` prints a resolved design. A JSON config file can supply
any flag (command-line values win); HD2SLS_THREADS supplies the default
worker count.

Exit codes: 0 success, 1 configuration problem (including usage errors),
2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .datagen import DEFAULT_RHO, ExperimentDesign, spec_from_config
from .errors import ConfigError, H2SLSError, NotPD
from .estimators import StageMethod, TuningRule
from .harness import (
    CUSTOM,
    ExperimentConfig,
    comparison_json,
    emit_comparison,
    emit_report,
    resolve_design,
    run_experiment,
    run_sensitivity,
)


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors; config problems are
    # exit 1 here, so route them through ConfigError instead.
    def error(self, message: str):
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="hd2sls", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment and write a report")
    _common_flags(run)
    run.add_argument("--out", help="output path (CSV also writes <stem>.agg<ext>)")
    run.add_argument("--format", choices=("csv", "json"), help="report format (default csv)")
    run.add_argument(
        "--diagnostics", action="store_true", default=None,
        help="include the diagnostics report for replication 0",
    )

    sweep = sub.add_parser("sweep", help="run several designs, one comparison row each")
    sweep.add_argument("--experiments", help="comma-separated design ids, e.g. 1,7,8")
    _common_flags(sweep, experiment=False)
    sweep.add_argument("--out", help="comparison table path")
    sweep.add_argument("--format", choices=("csv", "json"), help="table format (default csv)")

    spec = sub.add_parser("spec", help="print a resolved design")
    spec.add_argument("--experiment", help="design id 1..14")
    spec.add_argument("--rho", type=float, help=f"error correlation (default {DEFAULT_RHO})")
    spec.add_argument("--config", help="JSON config file with the same keys as the flags")
    return parser


def _common_flags(cmd: argparse.ArgumentParser, experiment: bool = True) -> None:
    if experiment:
        cmd.add_argument("--experiment", help=f"design id 1..14 or {CUSTOM}")
    cmd.add_argument("--n", type=int, help="sample size")
    cmd.add_argument("--reps", type=int, help="number of replications")
    cmd.add_argument("--seed", type=int, help="64-bit master seed")
    cmd.add_argument("--rho", type=float, help=f"error correlation (default {DEFAULT_RHO})")
    cmd.add_argument("--threads", type=int, help="worker count (default HD2SLS_THREADS or 1)")
    cmd.add_argument("--config", help="JSON config file with the same keys as the flags")


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return payload


def _setting(args: argparse.Namespace, config: dict, key: str, default=None, required=False):
    value = getattr(args, key, None)
    if value is None:
        value = config.get(key, default)
    if required and value is None:
        raise ConfigError(f"--{key} is required (flag or config file)")
    return value


def _threads(args: argparse.Namespace, config: dict) -> int:
    value = _setting(args, config, "threads")
    if value is None:
        raw = os.environ.get("HD2SLS_THREADS")
        if raw is not None:
            try:
                value = int(raw)
            except ValueError as exc:
                raise ConfigError(f"HD2SLS_THREADS must be an integer, got {raw!r}") from exc
    threads = int(value) if value is not None else 1
    if threads < 1:
        raise ConfigError(f"threads must be >= 1, got {threads}")
    return threads


def _experiment_id(raw) -> int | str:
    if raw is None:
        raise ConfigError("--experiment is required (flag or config file)")
    text = str(raw).strip()
    if text.upper() == CUSTOM:
        return CUSTOM
    try:
        return int(text)
    except ValueError as exc:
        raise ConfigError(
            f"experiment must be an integer 1..14 or {CUSTOM}, got {raw!r}"
        ) from exc


def _stage_method(name, default: StageMethod | None) -> StageMethod | None:
    if name is None:
        return default
    if str(name).upper() == "NONE":
        return None
    try:
        return StageMethod[str(name).upper()]
    except KeyError as exc:
        valid = ", ".join(m.name for m in StageMethod)
        raise ConfigError(f"unknown stage method {name!r}; valid: {valid}, NONE") from exc


def _custom_design(config: dict) -> ExperimentDesign:
    if "spec" not in config:
        raise ConfigError("CUSTOM experiments need a 'spec' object in the config file")
    raw = config["spec"]
    if not isinstance(raw, dict):
        raise ConfigError("config 'spec' must be a JSON object of model fields")
    spec = spec_from_config({k: str(v) for k, v in raw.items()})
    tuning = TuningRule(
        stage1_factor=float(config.get("stage1_factor", 0.4)),
        stage2_factor=float(config.get("stage2_factor", 0.1)),
    )
    return ExperimentDesign(
        experiment_id=0,
        spec=spec,
        stage1=_stage_method(config.get("stage1"), StageMethod.LASSO),
        stage2=_stage_method(config.get("stage2"), StageMethod.LASSO) or StageMethod.LASSO,
        tuning=tuning,
    )


def _experiment_config(args: argparse.Namespace, config: dict) -> ExperimentConfig:
    eid = _experiment_id(_setting(args, config, "experiment"))
    custom = _custom_design(config) if eid == CUSTOM else None
    return ExperimentConfig(
        experiment_id=eid,
        n=int(_setting(args, config, "n", required=True)),
        replications=int(_setting(args, config, "reps", required=True)),
        master_seed=int(_setting(args, config, "seed", required=True)),
        rho=float(_setting(args, config, "rho", default=DEFAULT_RHO)),
        parallelism=_threads(args, config),
        custom_design=custom,
    )


def _cmd_run(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    cfg = _experiment_config(args, config)
    out = _setting(args, config, "out", required=True)
    fmt = _setting(args, config, "format", default="csv")
    diagnostics = bool(_setting(args, config, "diagnostics", default=False))
    report = run_experiment(cfg, with_diagnostics=diagnostics)
    emit_report(report, fmt, out)
    agg = report.aggregate
    print(
        f"experiment {cfg.experiment_id}: n={cfg.n} reps={cfg.replications} "
        f"mean_l2={agg.mean_l2:.6g} select={agg.mean_select_pct:.6g}% -> {out}"
    )
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    raw = _setting(args, config, "experiments", required=True)
    try:
        ids = [int(tok) for tok in str(raw).split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"--experiments must be comma-separated integers, got {raw!r}") from exc
    if not ids:
        raise ConfigError("--experiments must name at least one design")
    n = int(_setting(args, config, "n", required=True))
    reps = int(_setting(args, config, "reps", required=True))
    seed = int(_setting(args, config, "seed", required=True))
    rho = float(_setting(args, config, "rho", default=DEFAULT_RHO))
    out = _setting(args, config, "out", required=True)
    fmt = _setting(args, config, "format", default="csv")
    reports = run_sensitivity(ids, n, reps, seed, rho, parallelism=_threads(args, config))
    if fmt == "csv":
        emit_comparison(reports, out)
    else:
        with open(out, "w") as fh:
            json.dump(comparison_json(reports), fh, indent=1)
            fh.write("\n")
    print(f"swept {len(reports)} designs at n={n} reps={reps} -> {out}")
    return 0


def _cmd_spec(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    eid = _experiment_id(_setting(args, config, "experiment"))
    rho = float(_setting(args, config, "rho", default=DEFAULT_RHO))
    rho_note = ""
    if eid == CUSTOM:
        design = _custom_design(config)
        rho = design.spec.rho
    else:
        try:
            design = resolve_design(
                ExperimentConfig(experiment_id=eid, n=1, replications=1, master_seed=0, rho=rho)
            )
        except NotPD:
            # The catalogue row itself is rho-free; print it anyway and
            # flag that generation at this rho would fail.
            design = resolve_design(
                ExperimentConfig(experiment_id=eid, n=1, replications=1, master_seed=0, rho=0.0)
            )
            rho_note = (
                f"  (infeasible: p*rho^2 = {design.spec.p * rho**2:g} >= 1, "
                f"generation will fail)"
            )
    spec = design.spec
    print(f"experiment={eid}")
    print(f"stage1={design.stage1.name if design.stage1 else 'NONE'}")
    print(f"stage2={design.stage2.name}")
    print(f"stage1_factor={design.tuning.stage1_factor:g}")
    print(f"stage2_factor={design.tuning.stage2_factor:g}")
    for name in ("p", "d", "k1", "k2"):
        print(f"{name}={getattr(spec, name)}")
    for name in ("sigma_eps", "sigma_eta", "sigma_z"):
        print(f"{name}={getattr(spec, name):g}")
    print(f"rho={rho:g}{rho_note}")
    print(f"row_corr={spec.row_corr:g}")
    values = np.unique(spec.beta_star[spec.beta_star != 0.0])
    print(
        f"beta_star: {int(np.count_nonzero(spec.beta_star))} nonzero of {spec.p}, "
        f"values {np.array2string(values, separator=', ')}"
    )
    rows = np.count_nonzero(spec.pi_star, axis=1)
    print(f"pi_star: {rows.min()}..{rows.max()} nonzero per row of {spec.d}")
    return 0


def cli_main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(list(sys.argv[1:]) if argv is None else list(argv))
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        return _cmd_spec(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except H2SLSError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help
        code = exc.code
        return int(code) if isinstance(code, int) else 0


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
