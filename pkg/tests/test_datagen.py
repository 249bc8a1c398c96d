import numpy as np
import pytest

from hd2sls.datagen import (
    DEFAULT_RHO,
    ModelSpec,
    SeedPolicy,
    build_error_cov,
    build_instrument_cov,
    experiment_spec,
    generate,
    sample_mvn,
    spec_from_config,
    spec_to_config,
)
from hd2sls.errors import ConfigError, NotPD, UnknownExperiment
from hd2sls.estimators import StageMethod


def small_spec(
    p=4,
    d=6,
    k1=4,
    sigma_eps=0.4,
    sigma_eta=0.4,
    sigma_z=1.0,
    rho=0.3,
    row_corr=0.0,
):
    """Low-dimensional spec safe for large-n moment checks."""
    beta = np.ones(p)
    pi = np.zeros((p, d))
    pi[:, :k1] = 1.0
    return ModelSpec(
        p=p, d=d, k1=k1, k2=p, beta_star=beta, pi_star=pi,
        sigma_eps=sigma_eps, sigma_eta=sigma_eta, sigma_z=sigma_z,
        rho=rho, row_corr=row_corr,
    )


class TestModelSpec:
    def test_feasibility_boundary(self):
        beta = np.ones(50) * 0.0
        beta[:5] = 1.0
        pi = np.zeros((50, 100))
        pi[:, :4] = 1.0
        kwargs = dict(
            p=50, d=100, k1=4, k2=5, beta_star=beta, pi_star=pi,
            sigma_eps=0.4, sigma_eta=0.4, sigma_z=1.0, row_corr=0.0,
        )
        with pytest.raises(NotPD):
            ModelSpec(rho=0.15, **kwargs)  # 50 * 0.15^2 = 1.125
        ModelSpec(rho=0.14, **kwargs)  # 50 * 0.14^2 = 0.98

    def test_exogenous_case_ignores_rho_feasibility(self):
        spec = small_spec(p=50, d=4, sigma_eta=0.0, rho=0.9)
        assert spec.sigma_eta == 0.0

    def test_shape_validation(self):
        with pytest.raises(ConfigError):
            small_spec(p=0)
        with pytest.raises(ConfigError):
            ModelSpec(
                p=2, d=2, k1=2, k2=2, beta_star=np.ones(3), pi_star=np.ones((2, 2)),
                sigma_eps=0.4, sigma_eta=0.4, sigma_z=1.0, rho=0.1, row_corr=0.0,
            )

    def test_sparsity_budget_enforced(self):
        with pytest.raises(ConfigError):
            ModelSpec(
                p=3, d=2, k1=2, k2=1, beta_star=np.ones(3), pi_star=np.ones((3, 2)),
                sigma_eps=0.4, sigma_eta=0.4, sigma_z=1.0, rho=0.1, row_corr=0.0,
            )
        with pytest.raises(ConfigError):
            ModelSpec(
                p=3, d=2, k1=1, k2=3, beta_star=np.ones(3), pi_star=np.ones((3, 2)),
                sigma_eps=0.4, sigma_eta=0.4, sigma_z=1.0, rho=0.1, row_corr=0.0,
            )

    def test_support_helpers(self):
        spec = experiment_spec(1, rho=0.1).spec
        np.testing.assert_array_equal(spec.support(), np.arange(5))
        supports = spec.stage1_supports()
        assert len(supports) == 50
        for s in supports:
            np.testing.assert_array_equal(s, np.arange(4))

    def test_parameter_range_validation(self):
        with pytest.raises(ConfigError):
            small_spec(sigma_eps=0.0)
        with pytest.raises(ConfigError):
            small_spec(sigma_eta=-0.1)
        with pytest.raises(ConfigError):
            small_spec(rho=1.0)
        with pytest.raises(ConfigError):
            small_spec(row_corr=1.0)
        with pytest.raises(ConfigError):
            small_spec(row_corr=-0.2)


class TestErrorCov:
    def test_uncorrelated_small_case(self):
        spec = small_spec(p=2, d=1, k1=1, rho=0.0)
        cov = build_error_cov(spec)
        np.testing.assert_allclose(cov, 0.16 * np.eye(3), atol=1e-15)

    def test_pattern(self):
        spec = small_spec(p=3, d=1, k1=1, rho=0.25, sigma_eps=0.5, sigma_eta=2.0)
        cov = build_error_cov(spec)
        assert cov.shape == (4, 4)
        assert cov[0, 0] == pytest.approx(0.25)
        np.testing.assert_allclose(cov[0, 1:], 0.25 * 0.5 * 2.0)
        np.testing.assert_allclose(cov[1:, 1:], 4.0 * np.eye(3), atol=1e-15)
        np.testing.assert_allclose(cov, cov.T, atol=0.0)
        assert np.all(np.linalg.eigvalsh(cov) > 0)

    def test_cholesky_exists_near_boundary(self):
        spec = small_spec(p=4, d=1, k1=1, rho=0.49)  # 4 * 0.49^2 = 0.9604
        cov = build_error_cov(spec)
        np.linalg.cholesky(cov)


class TestSampleMvn:
    def test_identity_moments(self):
        draws = sample_mvn(np.eye(2), 200_000, SeedPolicy(0))
        emp = np.cov(draws, rowvar=False)
        np.testing.assert_allclose(emp, np.eye(2), atol=0.02)

    def test_correlated_moments(self):
        cov = np.array([[1.0, 0.5], [0.5, 1.0]])
        draws = sample_mvn(cov, 200_000, SeedPolicy(1))
        emp = np.cov(draws, rowvar=False)
        np.testing.assert_allclose(emp, cov, atol=0.02)

    def test_not_pd_rejected(self):
        with pytest.raises(NotPD):
            sample_mvn(np.array([[1.0, 1.5], [1.5, 1.0]]), 10, SeedPolicy(0))

    def test_shape_validation(self):
        with pytest.raises(ConfigError):
            sample_mvn(np.zeros((2, 3)), 10, SeedPolicy(0))
        with pytest.raises(ConfigError):
            sample_mvn(np.array([[1.0, 0.1], [0.2, 1.0]]), 10, SeedPolicy(0))


class TestInstrumentCov:
    def test_independent_rows_give_scaled_identity(self):
        spec = small_spec(p=3, d=2, k1=2, sigma_z=0.4, row_corr=0.0)
        np.testing.assert_allclose(
            build_instrument_cov(spec), 0.16 * np.eye(6), atol=1e-15
        )

    def test_two_by_two_block(self):
        spec = small_spec(p=2, d=1, k1=1, row_corr=0.5)
        np.testing.assert_allclose(
            build_instrument_cov(spec), np.array([[1.0, 0.5], [0.5, 1.0]]), atol=1e-15
        )

    def test_entrywise_against_direct_construction(self):
        spec = small_spec(p=3, d=2, k1=2, sigma_z=0.7, row_corr=0.3)
        cov = build_instrument_cov(spec)
        # Direct definition, l-major layout: index = l * p + j.
        expected = np.zeros((6, 6))
        for l1 in range(2):
            for j1 in range(3):
                for l2 in range(2):
                    for j2 in range(3):
                        if l1 != l2:
                            value = 0.0
                        elif j1 == j2:
                            value = 0.49
                        else:
                            value = 0.49 * 0.3
                        expected[l1 * 3 + j1, l2 * 3 + j2] = value
        np.testing.assert_allclose(cov, expected, atol=1e-15)


class TestGenerate:
    def test_structural_identities_exact(self):
        spec = small_spec()
        data = generate(spec, 500, SeedPolicy(3))
        x_star = np.einsum("jil,jl->ij", data.Z, spec.pi_star)
        assert np.array_equal(data.X, x_star + data.eta)
        assert np.array_equal(data.y, data.X @ spec.beta_star + data.eps)

    def test_shapes(self):
        spec = small_spec(p=3, d=5, k1=2)
        data = generate(spec, 20, SeedPolicy(4))
        assert data.y.shape == (20,)
        assert data.X.shape == (20, 3)
        assert data.Z.shape == (3, 20, 5)
        assert data.eps.shape == (20,)
        assert data.eta.shape == (20, 3)
        assert data.n == 20
        assert data.p == 3

    def test_error_moments_large_n(self):
        spec = small_spec(p=5, d=4, k1=4, rho=0.3)
        data = generate(spec, 100_000, SeedPolicy(5))
        assert np.var(data.eps) == pytest.approx(0.16, rel=0.02)
        for j in range(5):
            r = np.corrcoef(data.eps, data.eta[:, j])[0, 1]
            assert r == pytest.approx(0.3, abs=0.02)

    def test_instrument_row_correlation_large_n(self):
        spec = small_spec(p=3, d=2, k1=2, rho=0.1, row_corr=0.5)
        data = generate(spec, 100_000, SeedPolicy(6))
        for l in range(2):
            r01 = np.corrcoef(data.Z[0][:, l], data.Z[1][:, l])[0, 1]
            assert r01 == pytest.approx(0.5, abs=0.02)
        # Distinct l components stay uncorrelated.
        r_cross = np.corrcoef(data.Z[0][:, 0], data.Z[1][:, 1])[0, 1]
        assert abs(r_cross) < 0.02

    def test_instrument_variance_large_n(self):
        spec = small_spec(p=3, d=2, k1=2, sigma_z=0.4)
        data = generate(spec, 100_000, SeedPolicy(7))
        assert np.var(data.Z[1][:, 0]) == pytest.approx(0.16, rel=0.03)

    def test_instrument_exogeneity(self):
        spec = small_spec(p=5, d=4, k1=4)
        n = 100_000
        data = generate(spec, n, SeedPolicy(8))
        bound = 4 * spec.sigma_z * spec.sigma_eps / np.sqrt(n)
        cov_pairs = [
            abs(float(np.mean(data.Z[j][:, l] * data.eps) - data.Z[j][:, l].mean() * data.eps.mean()))
            for j in range(5)
            for l in range(4)
        ]
        violations = sum(c >= bound for c in cov_pairs)
        assert violations <= 1  # 5% of the 20 pairs

    def test_exogenous_regressors_when_sigma_eta_zero(self):
        spec = small_spec(sigma_eta=0.0, rho=0.9)
        data = generate(spec, 300, SeedPolicy(9))
        x_star = np.einsum("jil,jl->ij", data.Z, spec.pi_star)
        assert np.array_equal(data.X, x_star)
        assert np.all(data.eta == 0.0)

    def test_endogeneity_strength_matches_analytic_value(self):
        # corr(x_ij, eps_i) = rho * sigma_eta / sqrt(k1 sigma_z^2 + sigma_eta^2)
        # when pi*_j has k1 unit entries and instruments are independent.
        spec = small_spec(p=4, d=6, k1=4, rho=0.3)
        data = generate(spec, 100_000, SeedPolicy(10))
        target = 0.3 * 0.4 / np.sqrt(4 * 1.0 + 0.16)
        for j in range(4):
            r = np.corrcoef(data.X[:, j], data.eps)[0, 1]
            assert r == pytest.approx(target, abs=0.01)

    def test_seed_determinism(self):
        spec = small_spec()
        a = generate(spec, 100, SeedPolicy(77, 3))
        b = generate(spec, 100, SeedPolicy(77, 3))
        assert np.array_equal(a.y, b.y)
        assert np.array_equal(a.X, b.X)
        assert np.array_equal(a.Z, b.Z)
        assert np.array_equal(a.eps, b.eps)
        assert np.array_equal(a.eta, b.eta)

    def test_replication_streams_differ(self):
        spec = small_spec()
        a = generate(spec, 100, SeedPolicy(77, 0))
        b = generate(spec, 100, SeedPolicy(77, 1))
        assert not np.array_equal(a.y, b.y)

    def test_bad_n_rejected(self):
        with pytest.raises(ConfigError):
            generate(small_spec(), 0, SeedPolicy(0))


class TestExperimentCatalogue:
    def test_baseline_design(self):
        design = experiment_spec(1, rho=0.1)
        spec = design.spec
        assert (spec.p, spec.d, spec.k1, spec.k2) == (50, 100, 4, 5)
        assert (spec.sigma_eps, spec.sigma_eta, spec.sigma_z) == (0.4, 0.4, 1.0)
        assert spec.row_corr == 0.0
        np.testing.assert_array_equal(spec.beta_star[:5], np.ones(5))
        assert np.all(spec.beta_star[5:] == 0.0)
        np.testing.assert_array_equal(spec.pi_star[:, :4], np.ones((50, 4)))
        assert np.all(spec.pi_star[:, 4:] == 0.0)
        assert design.stage1 is StageMethod.LASSO
        assert design.stage2 is StageMethod.LASSO
        assert design.tuning.stage1_factor == 0.4
        assert design.tuning.stage2_factor == 0.1
        assert not design.one_step

    def test_low_dimensional_design(self):
        design = experiment_spec(2)  # default rho feasible at p = 5
        assert design.spec.p == 5
        assert design.spec.d == 4
        assert design.stage1 is StageMethod.ORACLE_OLS
        assert design.stage2 is StageMethod.ORACLE_OLS
        np.testing.assert_array_equal(design.spec.beta_star, np.ones(5))
        np.testing.assert_array_equal(design.spec.pi_star, np.ones((5, 4)))

    def test_one_step_design(self):
        design = experiment_spec(3, rho=0.1)
        assert design.stage1 is None
        assert design.one_step
        assert design.stage2 is StageMethod.LASSO

    def test_pipeline_variants(self):
        assert experiment_spec(4, rho=0.1).stage1 is StageMethod.OLS
        assert experiment_spec(4, rho=0.1).stage2 is StageMethod.LASSO
        assert experiment_spec(5, rho=0.1).stage1 is StageMethod.LASSO
        assert experiment_spec(5, rho=0.1).stage2 is StageMethod.OLS
        assert experiment_spec(6, rho=0.1).stage1 is StageMethod.OLS
        assert experiment_spec(6, rho=0.1).stage2 is StageMethod.OLS

    def test_noise_variants(self):
        assert experiment_spec(7, rho=0.1).spec.sigma_eps == 1.0
        assert experiment_spec(8, rho=0.1).spec.sigma_eta == 1.0
        assert experiment_spec(9, rho=0.1).spec.sigma_z == 0.4
        for eid in (7, 8, 9):
            assert experiment_spec(eid, rho=0.1).spec.row_corr == 0.0

    def test_correlated_instrument_variants(self):
        for eid, sigma_field, value in ((10, None, None), (11, "sigma_eps", 1.0),
                                        (12, "sigma_eta", 1.0), (13, "sigma_z", 0.4)):
            spec = experiment_spec(eid, rho=0.1).spec
            assert spec.row_corr == 0.5
            if sigma_field is not None:
                assert getattr(spec, sigma_field) == value

    def test_weak_signal_design(self):
        design = experiment_spec(14, rho=0.1)
        np.testing.assert_allclose(design.spec.beta_star[:5], 0.01)
        assert design.tuning.stage2_factor == 0.001
        assert design.tuning.stage1_factor == 0.4

    def test_unknown_ids_rejected(self):
        with pytest.raises(UnknownExperiment):
            experiment_spec(0)
        with pytest.raises(UnknownExperiment):
            experiment_spec(15)

    def test_default_rho_infeasible_for_wide_designs(self):
        assert DEFAULT_RHO == 0.3
        with pytest.raises(NotPD):
            experiment_spec(1)  # 50 * 0.3^2 = 4.5


class TestSpecConfigRoundTrip:
    def test_round_trip_exact(self):
        spec = small_spec(p=3, d=2, k1=2, sigma_eps=0.123456789, rho=0.1 + 1e-14)
        flat = spec_to_config(spec)
        back = spec_from_config(flat)
        for name in ("p", "d", "k1", "k2"):
            assert getattr(back, name) == getattr(spec, name)
        for name in ("sigma_eps", "sigma_eta", "sigma_z", "rho", "row_corr"):
            assert getattr(back, name) == getattr(spec, name)
        assert np.array_equal(back.beta_star, spec.beta_star)
        assert np.array_equal(back.pi_star, spec.pi_star)

    def test_values_are_strings(self):
        flat = spec_to_config(small_spec())
        assert all(isinstance(v, str) for v in flat.values())
        assert ";" in flat["pi_star"]

    def test_missing_field_rejected(self):
        flat = spec_to_config(small_spec())
        del flat["sigma_z"]
        with pytest.raises(ConfigError):
            spec_from_config(flat)

    def test_malformed_number_rejected(self):
        flat = spec_to_config(small_spec())
        flat["rho"] = "zero point one"
        with pytest.raises(ConfigError):
            spec_from_config(flat)


class TestSeedPolicy:
    def test_validation(self):
        with pytest.raises(ConfigError):
            SeedPolicy(-1)
        with pytest.raises(ConfigError):
            SeedPolicy(2**64)
        with pytest.raises(ConfigError):
            SeedPolicy(0, -1)

    def test_generator_streams_are_reproducible(self):
        a = SeedPolicy(5, 2).generator().standard_normal(4)
        b = SeedPolicy(5, 2).generator().standard_normal(4)
        assert np.array_equal(a, b)
