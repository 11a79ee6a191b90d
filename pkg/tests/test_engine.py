import numpy as np
import pytest
import scipy.sparse as sp
from scipy.special import expit

from hurdlemap.engine import (
    EngineError,
    FitResult,
    HyperParam,
    ModelSpec,
    assemble,
    fit_from_json,
    fit_to_json,
    inner_mode,
    linear_predictor_samples,
    log_marginal_hyper,
    optimize_hyper,
    sample_posterior,
)
from hurdlemap.likelihoods import FamilySpec, log_pmf, sample_family
from hurdlemap.models import StructureConfig, build_component
from hurdlemap.simulate import (
    SimulationConfig,
    component_parts,
    dense_laplace,
    simulate_dataset,
)


def fixed_effects_model(y, X, family, offset=None):
    n = len(y)
    spec = ModelSpec(y=y, design_fixed=X,
                     offset_log=np.zeros(n) if offset is None else offset,
                     blocks=[], family=family)
    return assemble(spec)


def irls_penalized_logistic(y, X, prior_prec, n_iter=100):
    """Independent IRLS for a ridge-penalized logistic regression."""
    beta = np.zeros(X.shape[1])
    for _ in range(n_iter):
        p = expit(X @ beta)
        W = p * (1 - p)
        H = X.T @ (W[:, None] * X) + prior_prec * np.eye(X.shape[1])
        g = X.T @ (y - p) - prior_prec * beta
        beta = beta + np.linalg.solve(H, g)
    return beta


class TestInnerMode:
    def test_matches_irls_fixed_point(self):
        rng = np.random.default_rng(0)
        n = 400
        X = np.column_stack([np.ones(n), rng.standard_normal(n)])
        beta_true = np.array([0.3, -0.8])
        y = (rng.random(n) < expit(X @ beta_true)).astype(float)
        model = fixed_effects_model(y, X, FamilySpec("bernoulli"))
        inner = inner_mode(model, np.empty(0))
        expected = irls_penalized_logistic(y, X, 1e-4)
        np.testing.assert_allclose(inner.mode, expected, atol=1e-8)

    def test_zero_data_mode_is_prior_center(self):
        model = fixed_effects_model(np.empty(0), np.empty((0, 2)),
                                    FamilySpec("poisson"))
        inner = inner_mode(model, np.empty(0))
        np.testing.assert_allclose(inner.mode, 0.0)

    def test_negbinomial_recovers_coefficient(self):
        rng = np.random.default_rng(1)
        n = 200
        X = np.column_stack([np.ones(n), rng.integers(0, 2, n).astype(float)])
        beta_true = np.array([0.5, 0.9])
        fam = FamilySpec("negbinomial", dispersion=2.0)
        y = sample_family(fam, X @ beta_true, rng).astype(float)
        model = fixed_effects_model(y, X, fam)
        inner = inner_mode(model, model.hyper_init())
        cov = np.linalg.inv(inner.precision.toarray())
        sd = np.sqrt(np.diag(cov))
        assert np.all(np.abs(inner.mode - beta_true) < 3 * sd)

    def test_monotone_objective(self):
        rng = np.random.default_rng(2)
        n = 300
        X = np.column_stack([np.ones(n), rng.standard_normal(n)])
        y = sample_family(FamilySpec("poisson"), X @ [1.0, 0.5], rng).astype(float)
        model = fixed_effects_model(y, X, FamilySpec("poisson"))
        inner = inner_mode(model, np.empty(0))
        eta = model.offset + model.design_full @ inner.mode
        grad = (model.design_full.T @ (y - np.exp(eta))
                - model.prior_precision(np.empty(0)) @ inner.mode)
        assert np.abs(grad).max() < 1e-6


class TestLogMarginal:
    def small_sim(self, seed=3):
        cfg = SimulationConfig(
            n=150, n_years=3, mesh_max_edge=4.0, structural_form="II",
            family="poisson", dispersion=None,
            beta_binary=np.array([2.0, 0.0]), beta_count=np.array([0.8, 0.4]),
            seed=seed)
        sim = simulate_dataset(cfg)
        parts = component_parts(sim, "count", cfg)
        return parts.model

    def test_matches_dense_oracle(self):
        model = self.small_sim()
        assert model.dim <= 520
        for hyper in ([np.log(3.0), np.log(1.0), np.arctanh(0.5)],
                      [np.log(1.5), np.log(0.7), np.arctanh(0.2)]):
            hyper = np.array(hyper)
            value, inner = log_marginal_hyper(model, hyper)
            ref = dense_laplace(model, hyper)
            np.testing.assert_allclose(inner.mode, ref.mode, atol=1e-5)
            assert inner.factor.logdet == pytest.approx(ref.logdet, rel=1e-6)
            assert value == pytest.approx(ref.log_marginal, abs=1e-4)
        # the dense oracle must agree on which setting dominates
        h1 = np.array([np.log(3.0), np.log(1.0), np.arctanh(0.5)])
        h2 = np.array([np.log(0.3), np.log(3.0), np.arctanh(-0.5)])
        v1, _ = log_marginal_hyper(model, h1)
        v2, _ = log_marginal_hyper(model, h2)
        r1 = dense_laplace(model, h1).log_marginal
        r2 = dense_laplace(model, h2).log_marginal
        assert (v1 > v2) == (r1 > r2)

    def test_offset_shift_consistent_with_oracle(self):
        rng = np.random.default_rng(5)
        n = 120
        X = np.column_stack([np.ones(n), rng.standard_normal(n)])
        y = sample_family(FamilySpec("poisson"), X @ [0.5, 0.3], rng).astype(float)
        for shift in (0.0, 1.0):
            model = fixed_effects_model(y, X, FamilySpec("poisson"),
                                        offset=np.full(n, shift))
            value, _ = log_marginal_hyper(model, np.empty(0))
            ref = dense_laplace(model, np.empty(0))
            assert value == pytest.approx(ref.log_marginal, abs=1e-6)


class TestOptimizeHyper:
    def test_baseline_no_hyper_short_circuits(self):
        rng = np.random.default_rng(6)
        n = 100
        X = np.column_stack([np.ones(n), rng.standard_normal(n)])
        y = sample_family(FamilySpec("poisson"), X @ [0.5, 0.2], rng).astype(float)
        model = fixed_effects_model(y, X, FamilySpec("poisson"))
        fit = optimize_hyper(model)
        assert fit.n_marginal_evals == 1
        inner = inner_mode(model, np.empty(0))
        np.testing.assert_allclose(fit.latent_mode, inner.mode)

    def test_negbinomial_dispersion_recovery(self):
        rng = np.random.default_rng(7)
        n = 5000
        X = np.column_stack([np.ones(n), rng.integers(0, 2, n).astype(float)])
        fam = FamilySpec("negbinomial", dispersion=1.5)
        y = sample_family(fam, X @ [0.6, 0.8], rng).astype(float)
        model = fixed_effects_model(y, X, FamilySpec("negbinomial", 1.0))
        fit = optimize_hyper(model)
        assert abs(fit.hyper_mode[0] - np.log(1.5)) < 0.15

    def test_failing_start_raises(self):
        model = fixed_effects_model(
            np.array([1.0, 2.0]), np.ones((2, 1)),
            FamilySpec("negbinomial", 1.0))
        with pytest.raises(EngineError):
            optimize_hyper(model, init=np.array([np.nan]))


class TestSamplePosterior:
    def five_dim_fit(self):
        rng = np.random.default_rng(8)
        n = 400
        X = np.column_stack([np.ones(n), rng.standard_normal((n, 4))])
        y = (rng.random(n) < expit(X @ [0.2, 0.5, -0.5, 0.0, 0.3])).astype(float)
        model = fixed_effects_model(y, X, FamilySpec("bernoulli"))
        return optimize_hyper(model)

    def test_mean_within_monte_carlo_error(self):
        fit = self.five_dim_fit()
        S = 100_000
        draws = sample_posterior(fit, S, seed=11)
        cov = np.linalg.inv(fit.latent_precision.toarray())
        se = np.sqrt(np.diag(cov) / S)
        assert np.all(np.abs(draws.mean(axis=0) - fit.latent_mode) < 3.5 * se)

    def test_covariance_matches_dense_inverse(self):
        fit = self.five_dim_fit()
        draws = sample_posterior(fit, 200_000, seed=12)
        emp = np.cov(draws.T)
        dense = np.linalg.inv(fit.latent_precision.toarray())
        scale = np.abs(dense).max()
        assert np.abs(emp - dense).max() < 0.05 * scale

    def test_seed_determinism(self):
        fit = self.five_dim_fit()
        a = sample_posterior(fit, 64, seed=5)
        b = sample_posterior(fit, 64, seed=5)
        np.testing.assert_array_equal(a, b)

    def test_linear_predictor_chunks(self):
        fit = self.five_dim_fit()
        chunks = list(linear_predictor_samples(fit, 700, seed=3, chunk=250))
        assert sum(c.shape[1] for c in chunks) == 700
        assert all(c.shape[0] == fit.model.n for c in chunks)


class TestAssembleDimensions:
    def test_baseline_dimension(self):
        model = fixed_effects_model(np.zeros(10), np.ones((10, 3)),
                                    FamilySpec("poisson"))
        assert model.dim == 3

    def test_form_one_dimension(self):
        cfg = SimulationConfig(n=200, n_years=8, mesh_max_edge=4.0,
                               structural_form="I", family="poisson",
                               dispersion=None, seed=4,
                               beta_binary=np.array([1.0, 0.0]),
                               beta_count=np.array([0.5, 0.2]))
        sim = simulate_dataset(cfg)
        parts = component_parts(sim, "count", cfg,
                                StructureConfig(form="I", n_spline_basis=8))
        K = sim.mesh.n_vertices
        assert parts.model.dim == 2 + 8 + K

    def test_form_two_dimension(self):
        cfg = SimulationConfig(n=150, n_years=4, mesh_max_edge=4.0,
                               structural_form="II", family="poisson",
                               dispersion=None, seed=2,
                               beta_binary=np.array([1.0, 0.0]),
                               beta_count=np.array([0.5, 0.2]))
        sim = simulate_dataset(cfg)
        parts = component_parts(sim, "count", cfg)
        K = sim.mesh.n_vertices
        assert parts.model.dim == 2 + K * 4

    def test_dimension_mismatch_reports_block(self):
        bad = sp.csr_matrix(np.ones((10, 4)))
        block_hyper = (HyperParam("x", "log", ("normal", 0.0, 1.0)),)
        from hurdlemap.engine import LatentBlock

        block = LatentBlock("spatial", bad, block_hyper,
                            lambda v: sp.eye(5, format="csc"))
        spec = ModelSpec(y=np.zeros(10), design_fixed=np.ones((10, 1)),
                         offset_log=np.zeros(10), blocks=[block],
                         family=FamilySpec("poisson"))
        with pytest.raises(ValueError, match="spatial"):
            assemble(spec)


class TestSerialization:
    def test_round_trip(self):
        rng = np.random.default_rng(13)
        n = 150
        X = np.column_stack([np.ones(n), rng.standard_normal(n)])
        fam = FamilySpec("negbinomial", dispersion=1.2)
        y = sample_family(fam, X @ [0.5, 0.4], rng).astype(float)
        fit = optimize_hyper(fixed_effects_model(y, X, fam))
        text = fit_to_json(fit)
        back = fit_from_json(text)
        np.testing.assert_allclose(back.latent_mode, fit.latent_mode)
        np.testing.assert_allclose(back.latent_precision.toarray(),
                                   fit.latent_precision.toarray())
        np.testing.assert_allclose(back.hyper_mode, fit.hyper_mode)
        assert back.log_marginal == fit.log_marginal
        assert back.family.dispersion == fit.family.dispersion
        # round-tripped containers can still sample
        a = sample_posterior(back, 16, seed=1)
        b = sample_posterior(fit, 16, seed=1)
        np.testing.assert_allclose(a, b)
