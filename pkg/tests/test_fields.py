import numpy as np
import pytest
import scipy.sparse as sp
from scipy.integrate import quad

from hurdlemap.fields import (
    Ar1Params,
    PriorSpecError,
    SpdeParams,
    ar1_precision,
    build_spline_basis,
    matern_covariance,
    pc_prior_logpdf,
    space_time_precision,
    spde_precision,
    unit_variance_ar1,
)
from hurdlemap.geometry import assemble_fem, build_mesh
from hurdlemap.sparsela import SpdFactor

UNIT_SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def bessel_k1_quadrature(x):
    """Independent K_1 via the integral representation
    K_1(x) = int_0^inf exp(-x cosh t) cosh t dt."""
    val, _ = quad(lambda t: np.exp(-x * np.cosh(t)) * np.cosh(t), 0, 30,
                  limit=200)
    return val


class TestMaternCovariance:
    def test_zero_distance_is_variance(self):
        p = SpdeParams(range=2.0, marginal_sd=1.5)
        assert matern_covariance(0.0, p) == pytest.approx(1.5**2)

    def test_decay_to_zero(self):
        p = SpdeParams(range=1.0, marginal_sd=1.0)
        assert matern_covariance(50.0, p) < 1e-10

    def test_against_quadrature_bessel(self):
        # kappa = 1 when range = sqrt(8); then cov(d=1) = K_1(1)
        p = SpdeParams(range=np.sqrt(8.0), marginal_sd=1.0)
        expected = bessel_k1_quadrature(1.0)  # = 0.60190723...
        assert expected == pytest.approx(0.6019072301972346, abs=1e-12)
        assert matern_covariance(1.0, p) == pytest.approx(expected, rel=1e-10)

    def test_monotone_decreasing(self):
        p = SpdeParams(range=1.3, marginal_sd=0.8)
        d = np.linspace(0, 5, 200)
        cov = matern_covariance(d, p)
        assert (np.diff(cov) <= 1e-15).all()


class TestSpdePrecision:
    def test_symmetric_positive_definite(self):
        mesh = build_mesh(UNIT_SQUARE, UNIT_SQUARE, max_edge=0.3)
        fem = assemble_fem(mesh)
        block = spde_precision(fem, SpdeParams(range=0.7, marginal_sd=2.0))
        assert abs(block.matrix - block.matrix.T).max() < 1e-12
        SpdFactor(block.matrix)  # factorization succeeding proves SPD

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            SpdeParams(range=-1.0, marginal_sd=1.0)
        with pytest.raises(ValueError):
            SpdeParams(range=1.0, marginal_sd=0.0)

    def test_marginal_variance_large_range(self):
        # kappa = 1 on the unit square; extension must dwarf the range
        mesh = build_mesh(UNIT_SQUARE, UNIT_SQUARE, max_edge=0.15,
                          extension=2.0)
        fem = assemble_fem(mesh)
        block = spde_precision(fem, SpdeParams(range=np.sqrt(8.0),
                                               marginal_sd=1.0))
        X = SpdFactor(block.matrix).sample(np.random.default_rng(42), 10_000)
        v = mesh.vertices
        interior = ((v[:, 0] > 0.1) & (v[:, 0] < 0.9)
                    & (v[:, 1] > 0.1) & (v[:, 1] < 0.9))
        mean_var = X[interior].var(axis=1).mean()
        assert 0.8 < mean_var < 1.2

    def test_correlation_matches_matern(self):
        p = SpdeParams(range=0.5, marginal_sd=1.0)
        mesh = build_mesh(UNIT_SQUARE, UNIT_SQUARE, max_edge=0.08,
                          extension=0.5)
        fem = assemble_fem(mesh)
        X = SpdFactor(spde_precision(fem, p).matrix).sample(
            np.random.default_rng(1), 6000)
        v = mesh.vertices
        interior = np.flatnonzero(
            (v[:, 0] > 0.25) & (v[:, 0] < 0.75)
            & (v[:, 1] > 0.25) & (v[:, 1] < 0.75))
        # pick pairs of interior vertices separated by ~0.5r and ~r
        for dist in (0.25, 0.5):
            pairs = []
            for i in interior[:60]:
                d = np.linalg.norm(v[interior] - v[i], axis=1)
                j = interior[np.argmin(np.abs(d - dist))]
                if abs(np.linalg.norm(v[i] - v[j]) - dist) < 0.02:
                    pairs.append((i, j))
            assert pairs
            emp = np.mean([np.corrcoef(X[i], X[j])[0, 1] for i, j in pairs])
            theo = matern_covariance(dist, p) / p.marginal_sd**2
            assert emp == pytest.approx(theo, abs=0.05)


class TestAr1Precision:
    def test_rho_zero_identity(self):
        block = ar1_precision(3, Ar1Params(0.0, 1.0))
        np.testing.assert_allclose(block.matrix.toarray(), np.eye(3))

    def test_two_point_correlation(self):
        block = ar1_precision(2, Ar1Params(0.5, 1.0))
        cov = np.linalg.inv(block.matrix.toarray())
        assert cov[0, 1] / cov[0, 0] == pytest.approx(0.5)

    def test_stationary_covariance_oracle(self):
        rho, tau, T = 0.574, 1.7, 5
        block = ar1_precision(T, Ar1Params(rho, tau))
        cov = np.linalg.inv(block.matrix.toarray())
        var = 1.0 / (tau * (1 - rho**2))
        lags = np.abs(np.subtract.outer(np.arange(T), np.arange(T)))
        np.testing.assert_allclose(cov, rho**lags * var, atol=1e-8)

    def test_rho_out_of_range(self):
        with pytest.raises(ValueError):
            Ar1Params(1.0, 1.0)

    def test_unit_variance_scaling(self):
        block = unit_variance_ar1(6, 0.6)
        cov = np.linalg.inv(block.matrix.toarray())
        np.testing.assert_allclose(np.diag(cov)[1:-1], 1.0, atol=1e-12)


class TestSpaceTimePrecision:
    def spatial_block(self):
        mesh = build_mesh(UNIT_SQUARE, UNIT_SQUARE, max_edge=0.9)
        fem = assemble_fem(mesh)
        return spde_precision(fem, SpdeParams(range=0.8, marginal_sd=1.0))

    def test_single_time_returns_spatial(self):
        spatial = self.spatial_block()
        temporal = ar1_precision(1, Ar1Params(0.6, 1.0))
        joint = space_time_precision(spatial, temporal)
        assert abs(joint.matrix - spatial.matrix).max() < 1e-14

    def test_rho_zero_block_diagonal(self):
        spatial = self.spatial_block()
        temporal = ar1_precision(3, Ar1Params(0.0, 1.0))
        joint = space_time_precision(spatial, temporal).matrix.toarray()
        K = spatial.dim
        off_block = joint[:K, K:2 * K]
        np.testing.assert_allclose(off_block, 0.0)
        np.testing.assert_allclose(joint[:K, :K], spatial.matrix.toarray())

    def test_sample_covariance_matches_dense_inverse(self):
        Qs = sp.csc_matrix(np.array([[2.0, -0.5, 0.0],
                                     [-0.5, 2.0, -0.5],
                                     [0.0, -0.5, 2.0]]))
        from hurdlemap.fields import PrecisionBlock

        spatial = PrecisionBlock(Qs, 3, "spatial")
        temporal = ar1_precision(2, Ar1Params(0.7, 1.0))
        joint = space_time_precision(spatial, temporal)
        X = SpdFactor(joint.matrix).sample(np.random.default_rng(8), 100_000)
        emp = np.cov(X)
        dense = np.linalg.inv(joint.matrix.toarray())
        assert np.abs(emp - dense).max() < 0.05

    def test_logdet_identity(self):
        spatial = self.spatial_block()
        temporal = ar1_precision(4, Ar1Params(0.574, 1.3))
        joint = space_time_precision(spatial, temporal)
        expected = (spatial.dim * SpdFactor(temporal.matrix).logdet
                    + temporal.dim * SpdFactor(spatial.matrix).logdet)
        assert SpdFactor(joint.matrix).logdet == pytest.approx(expected,
                                                               rel=1e-6)


class TestSplineBasis:
    YEARS = np.arange(1997, 2023)

    def test_partition_of_unity(self):
        basis = build_spline_basis(self.YEARS, 8)
        sums = np.asarray(basis.matrix.sum(axis=1)).ravel()
        np.testing.assert_allclose(sums, 1.0, atol=1e-10)

    def test_continuity_at_knots(self):
        basis = build_spline_basis(self.YEARS, 8)
        for knot in basis.knots[1:-1]:
            left = basis.evaluate([knot - 1e-9]).toarray()
            right = basis.evaluate([knot + 1e-9]).toarray()
            assert np.abs(left - right).max() < 1e-6

    def test_second_derivative_continuity(self):
        basis = build_spline_basis(self.YEARS, 8)
        h = 1e-4
        for knot in basis.knots[1:-1]:
            d2 = []
            for x in (knot - 5 * h, knot + 5 * h):
                vals = [basis.evaluate([x + k * h]).toarray() for k in (-1, 0, 1)]
                d2.append((vals[0] - 2 * vals[1] + vals[2]) / h**2)
            assert np.abs(d2[0] - d2[1]).max() < 1e-3

    def test_four_nonzeros_nonnegative(self):
        basis = build_spline_basis(self.YEARS, 9)
        counts = np.diff(basis.matrix.indptr)
        assert (counts <= 4).all()
        assert basis.matrix.data.min() >= 0

    def test_too_few_basis_functions(self):
        with pytest.raises(ValueError):
            build_spline_basis(self.YEARS, 3)


class TestPcPriors:
    def test_sd_rate(self):
        # P(sd > 1) = 0.9 means rate -ln(0.9)
        lp0 = pc_prior_logpdf("sd", 0.0, 1.0, 0.9)
        assert np.exp(lp0) == pytest.approx(-np.log(0.9), rel=1e-12)
        assert np.exp(lp0) == pytest.approx(0.10536, abs=1e-5)

    @pytest.mark.parametrize("kind,threshold,prob,support", [
        ("sd", 1.0, 0.9, (0, 200.0)),
        ("range", 1.42, 0.9, (1e-6, np.inf)),
        ("precision", 0.5, 0.9, (1e-12, np.inf)),
        ("correlation", 0.0, 0.9, (-1 + 1e-12, 1 - 1e-12)),
    ])
    def test_density_integrates_to_one(self, kind, threshold, prob, support):
        val, _ = quad(lambda x: np.exp(pc_prior_logpdf(kind, x, threshold, prob)),
                      *support, limit=400)
        assert val == pytest.approx(1.0, abs=1e-4)

    def test_range_quantile(self):
        val, _ = quad(lambda r: np.exp(pc_prior_logpdf("range", r, 1.42, 0.9)),
                      1e-9, 1.42, limit=400)
        assert val == pytest.approx(0.9, abs=1e-4)

    def test_precision_quantile(self):
        val, _ = quad(lambda t: np.exp(pc_prior_logpdf("precision", t, 0.5, 0.9)),
                      0.5, np.inf, limit=400)
        assert val == pytest.approx(0.9, abs=1e-4)

    def test_correlation_mass_above_zero(self):
        val, _ = quad(lambda r: np.exp(pc_prior_logpdf("correlation", r, 0.0, 0.9)),
                      0.0, 1.0 - 1e-12, limit=400)
        assert val == pytest.approx(0.9, abs=1e-4)

    def test_unattainable_spec(self):
        with pytest.raises(PriorSpecError):
            pc_prior_logpdf("correlation", 0.5, 0.0, 0.5)  # below 1/sqrt(2)
        with pytest.raises(PriorSpecError):
            pc_prior_logpdf("sd", 1.0, 1.0, 1.5)
        with pytest.raises(PriorSpecError):
            pc_prior_logpdf("range", 1.0, -2.0, 0.9)
