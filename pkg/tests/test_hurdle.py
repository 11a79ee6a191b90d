import numpy as np
import pytest
import scipy.sparse as sp

from hurdlemap.engine import FitResult, ModelSpec, assemble, optimize_hyper
from hurdlemap.hurdle import (
    CountOutcome,
    classify_zeros,
    default_threshold_grid,
    fit_sequential,
    make_binary,
    nonzero_waic,
    predict_pi_tilde,
    select_threshold,
)
from hurdlemap.likelihoods import FamilySpec, sample_family
from hurdlemap.models import ModelParts, StructureConfig, build_component


def intercept_fit(mode, n=50, prec=1e8):
    """Handcrafted Bernoulli intercept-only fit with tiny posterior spread."""
    spec = ModelSpec(y=np.zeros(n), design_fixed=np.ones((n, 1)),
                     offset_log=np.zeros(n), blocks=[],
                     family=FamilySpec("bernoulli"))
    model = assemble(spec)
    return FitResult(
        latent_mode=np.array([mode]),
        latent_precision=sp.csc_matrix(np.array([[prec]])),
        hyper_mode=np.empty(0), hyper_names=[], hyper_constrained={},
        hyper_covariance=np.empty((0, 0)), log_marginal=0.0,
        per_obs_loglik=np.zeros(n), family=FamilySpec("bernoulli"),
        structural_form="baseline", model=model)


def simulate_hurdle_fixed_effects(n, seed, beta_b=(1.8, -4.0),
                                  beta_c=(1.6, 0.0), dispersion=1.5):
    """Hurdle data whose structural zeros ride on one binary covariate."""
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 2, n).astype(float)
    X = np.column_stack([np.ones(n), x])
    eta_b = X @ np.asarray(beta_b)
    eta_c = X @ np.asarray(beta_c)
    from scipy.special import expit

    occurrence = rng.random(n) < expit(eta_b)
    fam = FamilySpec("negbinomial", dispersion)
    counts = sample_family(fam, eta_c, rng)
    y = np.where(occurrence, counts, 0)
    return y.astype(float), X, ~occurrence


def baseline_parts(y, X, family):
    cfg = StructureConfig(form="baseline")
    return build_component(y, X, np.zeros(len(y)), np.zeros((len(y), 2)),
                           np.full(len(y), 2000), family, cfg)


class TestMakeBinary:
    def test_basic(self):
        np.testing.assert_array_equal(make_binary([0, 3, 0, 1]), [0, 1, 0, 1])

    def test_all_zeros(self):
        np.testing.assert_array_equal(make_binary(np.zeros(5)), np.zeros(5))

    def test_large_count(self):
        y = np.zeros(10)
        y[3] = 1172
        assert make_binary(y)[3] == 1

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            make_binary([-1, 2])


class TestClassifyZeros:
    C_PAPERLIKE = 0.99055

    def test_high_probability_zero_is_count_zero(self):
        out = classify_zeros([0.0], [0.995], self.C_PAPERLIKE)
        assert not out.is_na[0]
        assert out.values[0] == 0.0

    def test_low_probability_zero_is_structural(self):
        out = classify_zeros([0.0], [0.5], self.C_PAPERLIKE)
        assert out.is_na[0]

    def test_positive_passes_through(self):
        out = classify_zeros([7.0], [0.1], self.C_PAPERLIKE)
        assert out.values[0] == 7.0
        assert not out.is_na[0]

    def test_boundary_c_zero(self):
        pi = np.array([0.0, 0.3, 0.999])
        out = classify_zeros(np.zeros(3), pi, 0.0)
        assert out.n_structural == 0

    def test_boundary_c_one(self):
        pi = np.array([0.0, 0.3, 1.0])
        out = classify_zeros(np.zeros(3), pi, 1.0)
        # only an exact predictive probability of one stays a count zero
        np.testing.assert_array_equal(out.is_na, [True, True, False])

    def test_partition_exact(self):
        rng = np.random.default_rng(0)
        y = rng.integers(0, 3, 200).astype(float)
        pi = rng.random(200)
        out = classify_zeros(y, pi, 0.6)
        n_zero = int((y == 0).sum())
        n_count_zero = int(((out.values == 0) & ~out.is_na).sum())
        assert out.n_structural + n_count_zero == n_zero


class TestPredictPiTilde:
    def test_degenerate_intercept_only(self):
        fit = intercept_fit(0.0)
        pi = predict_pi_tilde(fit, n_samples=10_000, seed=0)
        np.testing.assert_allclose(pi, 0.5, atol=0.01)

    def test_monotone_in_intercept(self):
        lo = predict_pi_tilde(intercept_fit(0.0), 5000, seed=1)
        hi = predict_pi_tilde(intercept_fit(0.8), 5000, seed=1)
        assert (hi > lo).all()

    def test_monte_carlo_error_bound(self):
        fit = intercept_fit(0.3, prec=4.0)  # posterior sd 0.5 on the logit
        estimates = [predict_pi_tilde(fit, 10_000, seed=s)[0]
                     for s in range(12)]
        # binomial-style bound: sd of the mean of [0,1] values <= 0.5/100
        assert np.std(estimates) < 0.006


class TestSelectThreshold:
    def test_separable_structural_zeros(self):
        y, X, structural = simulate_hurdle_fixed_effects(1500, seed=5)
        fam = FamilySpec("negbinomial", 1.0)
        binary = baseline_parts(make_binary(y).astype(float), X,
                                FamilySpec("bernoulli"))
        count_full = baseline_parts(y, X, fam)
        seq = fit_sequential(y, binary, count_full, seed=3)
        c = seq.selection.chosen_c
        # the scan must reject "keep every zero" and detect the
        # structural mechanism; WAIC over the positives typically lands
        # at or near the top of the candidate grid
        assert c > 0.0
        accuracy = seq.outcome.is_na[structural].mean()
        assert accuracy >= 0.9
        assert c in seq.selection.grid
        # WAIC should degrade monotonically toward keeping all zeros
        w = seq.selection.waic_nonzero
        assert w[0] == max(w[np.isfinite(w)])

    def test_no_zeros_grid_degenerates(self):
        rng = np.random.default_rng(9)
        n = 300
        X = np.column_stack([np.ones(n), rng.integers(0, 2, n).astype(float)])
        y = sample_family(FamilySpec("poisson"), X @ [1.5, 0.3], rng) + 1.0
        assert (y > 0).all()
        binary = baseline_parts(make_binary(y).astype(float), X,
                                FamilySpec("bernoulli"))
        count_full = baseline_parts(y.astype(float), X, FamilySpec("poisson"))
        seq = fit_sequential(y.astype(float), binary, count_full,
                             grid=np.array([0.0, 1.0]), seed=0)
        w = seq.selection.waic_nonzero
        assert w[0] == pytest.approx(w[1], rel=1e-12)
        assert seq.selection.chosen_c == 0.0

    def test_default_grid_members(self):
        y = np.array([0.0, 0.0, 2.0, 0.0, 5.0])
        pi = np.array([0.2, 0.8, 0.9, 0.2, 0.95])
        grid = default_threshold_grid(y, pi)
        np.testing.assert_allclose(grid, [0.0, 0.2, 0.8, 1.0])

    def test_identical_classifications_share_waic(self):
        y, X, _ = simulate_hurdle_fixed_effects(400, seed=11)
        fam = FamilySpec("negbinomial", 1.0)
        binary = baseline_parts(make_binary(y).astype(float), X,
                                FamilySpec("bernoulli"))
        count_full = baseline_parts(y, X, fam)
        fit_b = optimize_hyper(binary.model)
        pi = predict_pi_tilde(fit_b, 2000, seed=0)
        # c=0 and c=min(pi at zeros) classify identically (all count zeros)
        eps_c = float(pi[y == 0].min())
        from hurdlemap.models import subset_component

        def fitter(outcome, warm):
            keep = outcome.kept()
            parts = subset_component(count_full, keep, outcome.values[keep])
            return optimize_hyper(parts.model, init=warm)

        sel, _ = select_threshold(y, pi, fitter,
                                  grid=np.array([0.0, eps_c]),
                                  waic_samples=300, seed=1)
        assert sel.waic_nonzero[0] == sel.waic_nonzero[1]

    def test_all_candidates_failing_raises(self):
        y = np.array([0.0, 1.0, 2.0])
        pi = np.array([0.5, 0.9, 0.9])

        def bad_fitter(outcome, warm):
            raise RuntimeError("boom")

        from hurdlemap.hurdle import HurdleError

        with pytest.raises(HurdleError):
            select_threshold(y, pi, bad_fitter, grid=np.array([0.0, 0.7]))


class TestFitSequential:
    def test_constant_positive_counts_complete(self):
        n = 200
        y = np.full(n, 5.0)
        rng = np.random.default_rng(2)
        X = np.column_stack([np.ones(n), rng.integers(0, 2, n).astype(float)])
        binary = baseline_parts(make_binary(y).astype(float), X,
                                FamilySpec("bernoulli"))
        count_full = baseline_parts(y, X, FamilySpec("poisson"))
        seq = fit_sequential(y, binary, count_full, seed=0)
        assert seq.count_fit.latent_mode.shape == (2,)
        assert seq.outcome.n_structural == 0

    def test_seed_reproducibility(self):
        y, X, _ = simulate_hurdle_fixed_effects(500, seed=21)
        fam = FamilySpec("negbinomial", 1.0)

        def run():
            binary = baseline_parts(make_binary(y).astype(float), X,
                                    FamilySpec("bernoulli"))
            count_full = baseline_parts(y, X, fam)
            return fit_sequential(y, binary, count_full, seed=7,
                                  waic_samples=300, pi_samples=3000)

        a, b = run(), run()
        assert a.selection.chosen_c == b.selection.chosen_c
        np.testing.assert_allclose(a.count_fit.latent_mode,
                                   b.count_fit.latent_mode, atol=1e-12)
        np.testing.assert_allclose(a.binary_fit.latent_mode,
                                   b.binary_fit.latent_mode, atol=1e-12)

    def test_thread_count_does_not_change_result(self):
        y, X, _ = simulate_hurdle_fixed_effects(400, seed=31)
        fam = FamilySpec("negbinomial", 1.0)

        def run(threads):
            binary = baseline_parts(make_binary(y).astype(float), X,
                                    FamilySpec("bernoulli"))
            count_full = baseline_parts(y, X, fam)
            return fit_sequential(y, binary, count_full, seed=4,
                                  waic_samples=300, pi_samples=2000,
                                  n_threads=threads)

        a, b = run(1), run(3)
        assert a.selection.chosen_c == b.selection.chosen_c
        np.testing.assert_allclose(a.selection.waic_nonzero,
                                   b.selection.waic_nonzero,
                                   rtol=0, atol=0, equal_nan=True)
