import json

import numpy as np
import pytest

from hd2sls.datagen import ExperimentDesign, ModelSpec
from hd2sls.errors import ConfigError, SingularGram
from hd2sls.estimators import StageMethod, TuningRule
from hd2sls.harness import (
    AGG_HEADER,
    CUSTOM,
    RECORD_HEADER,
    ExperimentConfig,
    agg_path_for,
    comparison_json,
    emit_comparison,
    emit_report,
    resolve_design,
    run_experiment,
    run_sensitivity,
    tracked_coordinates,
)


def fast_config(**overrides):
    base = dict(experiment_id=2, n=60, replications=3, master_seed=7, rho=0.1)
    base.update(overrides)
    return ExperimentConfig(**base)


def tiny_custom_design(stage2=StageMethod.OLS):
    spec = ModelSpec(
        p=6, d=2, k1=2, k2=6, beta_star=np.ones(6), pi_star=np.ones((6, 2)),
        sigma_eps=0.4, sigma_eta=0.4, sigma_z=1.0, rho=0.1, row_corr=0.0,
    )
    return ExperimentDesign(0, spec, StageMethod.LASSO, stage2)


class TestConfigValidation:
    def test_unknown_experiment_id(self):
        with pytest.raises(ConfigError):
            fast_config(experiment_id=0)
        with pytest.raises(ConfigError):
            fast_config(experiment_id=15)
        with pytest.raises(ConfigError):
            fast_config(experiment_id="custom")  # must be the exact token

    def test_custom_requires_design(self):
        with pytest.raises(ConfigError):
            fast_config(experiment_id=CUSTOM)
        with pytest.raises(ConfigError):
            fast_config(custom_design=tiny_custom_design())
        fast_config(experiment_id=CUSTOM, custom_design=tiny_custom_design())

    def test_scalar_bounds(self):
        with pytest.raises(ConfigError):
            fast_config(n=0)
        with pytest.raises(ConfigError):
            fast_config(replications=0)
        with pytest.raises(ConfigError):
            fast_config(master_seed=-1)
        with pytest.raises(ConfigError):
            fast_config(parallelism=0)


class TestResolveDesign:
    def test_tuning_override_replaces_design_rule(self):
        cfg = fast_config(experiment_id=1, tuning=TuningRule(stage2_factor=0.05))
        assert resolve_design(cfg).tuning.stage2_factor == 0.05

    def test_design_rule_survives_when_tuning_is_none(self):
        cfg = fast_config(experiment_id=14)
        assert resolve_design(cfg).tuning.stage2_factor == 0.001

    def test_ols_first_stage_needs_enough_rows(self):
        for eid in (4, 6):
            cfg = fast_config(experiment_id=eid, n=47)
            with pytest.raises(ConfigError, match="n >= d"):
                resolve_design(cfg)


class TestRunExperiment:
    def test_record_count_and_indices(self):
        cfg = fast_config(replications=4)
        report = run_experiment(cfg)
        assert len(report.records) == 4
        assert [r.rep for r in report.records] == [0, 1, 2, 3]
        assert all(r.n == cfg.n for r in report.records)
        assert all(r.experiment == 2 for r in report.records)
        assert all(r.converged for r in report.records)

    def test_single_replication_aggregate_is_the_record(self):
        report = run_experiment(fast_config(replications=1))
        rec = report.records[0]
        assert report.aggregate.mean_l2 == rec.l2_error
        assert report.aggregate.smse == pytest.approx(rec.l2_error**2, rel=1e-12)
        assert report.aggregate.mean_select_pct == rec.select_pct

    def test_rerun_is_bit_identical(self):
        cfg = fast_config()
        a = run_experiment(cfg)
        b = run_experiment(cfg)
        assert a.records == b.records
        assert a.aggregate.mean_l2 == b.aggregate.mean_l2
        assert a.aggregate.smse == b.aggregate.smse

    def test_parallel_matches_serial_exactly(self):
        serial = run_experiment(fast_config(replications=4))
        parallel = run_experiment(fast_config(replications=4, parallelism=2))
        assert serial.records == parallel.records
        assert serial.aggregate.mean_l2 == parallel.aggregate.mean_l2
        assert serial.aggregate.smse == parallel.aggregate.smse
        assert serial.aggregate.squared_bias == parallel.aggregate.squared_bias
        np.testing.assert_array_equal(
            serial.aggregate.percentiles[50], parallel.aggregate.percentiles[50]
        )

    def test_one_step_design_has_no_stage1_fields(self):
        cfg = fast_config(experiment_id=3, n=47, replications=2)
        report = run_experiment(cfg)
        assert report.stage1 is None
        assert all(r.stage1_l2_avg is None for r in report.records)
        assert all(r.stage1_select_pct is None for r in report.records)
        assert report.metadata["stage1"] is None

    def test_two_stage_design_fills_stage1_fields(self):
        cfg = fast_config(experiment_id=1, n=47, replications=2)
        report = run_experiment(cfg)
        assert report.stage1 is not None
        assert report.stage1.mean_l2 > 0
        assert all(r.stage1_l2_avg is not None for r in report.records)
        assert report.metadata["stage1"] == "LASSO"

    def test_failure_is_annotated_with_experiment_and_replication(self):
        cfg = ExperimentConfig(
            experiment_id=CUSTOM, n=4, replications=2, master_seed=7, rho=0.1,
            custom_design=tiny_custom_design(stage2=StageMethod.OLS),
        )
        with pytest.raises(SingularGram, match=r"experiment CUSTOM, replication 0"):
            run_experiment(cfg)

    def test_diagnostics_attach_on_request(self):
        report = run_experiment(fast_config(), with_diagnostics=True)
        assert report.diagnostics is not None
        assert report.diagnostics.pdw_success == (report.diagnostics.pdw_mu_max < 1)
        plain = run_experiment(fast_config())
        assert plain.diagnostics is None

    def test_diagnostics_rep_out_of_range(self):
        with pytest.raises(ConfigError):
            run_experiment(fast_config(replications=2), with_diagnostics=True,
                           diagnostics_rep=2)

    def test_metadata_contents(self):
        report = run_experiment(fast_config())
        md = report.metadata
        assert md["experiment"] == 2
        assert md["replications"] == 3
        assert md["spec"]["p"] == "5"
        assert set(md["wall_time_s"]) == {"generate", "fit", "total"}
        assert md["numpy_version"] == np.__version__


class TestSensitivity:
    def test_empty_id_list(self):
        assert run_sensitivity([], 47, 2, 7, 0.1) == []

    def test_shared_settings_across_designs(self):
        reports = run_sensitivity([2, 3], 47, 2, 7, 0.1)
        assert len(reports) == 2
        assert [r.config.experiment_id for r in reports] == [2, 3]
        assert all(r.config.master_seed == 7 for r in reports)


class TestTrackedCoordinates:
    def test_sparse_spec_tracks_boundary_coordinates(self):
        from hd2sls.datagen import experiment_spec

        spec = experiment_spec(1, rho=0.1).spec
        assert tracked_coordinates(spec) == {"b5": 4, "b6": 5}

    def test_saturated_spec_has_no_irrelevant_coordinate(self):
        from hd2sls.datagen import experiment_spec

        spec = experiment_spec(2, rho=0.1).spec
        assert tracked_coordinates(spec) == {"b5": 4, "b6": None}


class TestEmission:
    def test_agg_path_derivation(self):
        assert agg_path_for("out.csv") == "out.agg.csv"
        assert agg_path_for("runs/exp1.json") == "runs/exp1.agg.json"
        assert agg_path_for("bare") == "bare.agg.csv"

    def test_csv_layout(self, tmp_path):
        report = run_experiment(fast_config(replications=2))
        path = tmp_path / "out.csv"
        emit_report(report, "csv", str(path))
        lines = path.read_text().splitlines()
        assert lines[0] == RECORD_HEADER
        assert len(lines) == 3
        agg_lines = (tmp_path / "out.agg.csv").read_text().splitlines()
        assert agg_lines[0] == AGG_HEADER
        assert len(agg_lines) == 2

    def test_csv_is_deterministic_bytes(self, tmp_path):
        cfg = fast_config()
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        emit_report(run_experiment(cfg), "csv", str(p1))
        emit_report(run_experiment(cfg), "csv", str(p2))
        assert p1.read_bytes() == p2.read_bytes()
        assert (tmp_path / "a.agg.csv").read_bytes() == (tmp_path / "b.agg.csv").read_bytes()

    def test_csv_contains_no_timings(self, tmp_path):
        report = run_experiment(fast_config())
        path = tmp_path / "out.csv"
        emit_report(report, "csv", str(path))
        assert "wall_time" not in path.read_text()
        assert "wall_time" not in (tmp_path / "out.agg.csv").read_text()

    def test_saturated_design_leaves_b6_cells_empty(self, tmp_path):
        report = run_experiment(fast_config(replications=2))
        path = tmp_path / "out.csv"
        emit_report(report, "csv", str(path))
        header, row = (tmp_path / "out.agg.csv").read_text().splitlines()
        cells = dict(zip(header.split(","), row.split(",")))
        assert cells["p5_b6"] == ""
        assert cells["p50_b6"] == ""
        assert cells["p95_b6"] == ""
        assert cells["p50_b5"] != ""

    def test_one_step_rows_leave_stage1_cells_empty(self, tmp_path):
        report = run_experiment(fast_config(experiment_id=3, n=47, replications=2))
        path = tmp_path / "out.csv"
        emit_report(report, "csv", str(path))
        header, *rows = path.read_text().splitlines()
        for row in rows:
            cells = dict(zip(header.split(","), row.split(",")))
            assert cells["stage1_l2_avg"] == ""
            assert cells["stage1_select_pct"] == ""

    def test_json_round_trip(self, tmp_path):
        report = run_experiment(fast_config(), with_diagnostics=True)
        path = tmp_path / "out.json"
        emit_report(report, "json", str(path))
        payload = json.loads(path.read_text())
        assert set(payload) == {"metadata", "records", "aggregate", "diagnostics"}
        assert len(payload["records"]) == 3
        assert payload["aggregate"]["mean_l2"] == float(
            f"{report.aggregate.mean_l2:.6g}"
        )
        assert payload["records"][0]["l2_error"] == float(
            f"{report.records[0].l2_error:.6g}"
        )
        assert payload["metadata"]["wall_time_s"]["total"] > 0
        assert payload["diagnostics"]["pdw_success"] in (True, False)

    def test_unknown_format_rejected(self, tmp_path):
        report = run_experiment(fast_config())
        with pytest.raises(ConfigError):
            emit_report(report, "parquet", str(tmp_path / "out.pq"))

    def test_comparison_outputs(self, tmp_path):
        reports = run_sensitivity([2, 3], 47, 2, 7, 0.1)
        path = tmp_path / "cmp.csv"
        emit_comparison(reports, str(path))
        lines = path.read_text().splitlines()
        assert lines[0] == AGG_HEADER
        assert len(lines) == 3
        assert lines[1].startswith("2,")
        assert lines[2].startswith("3,")
        blob = comparison_json(reports)
        assert len(blob) == 2
        assert set(blob[0]) == {"metadata", "aggregate"}
