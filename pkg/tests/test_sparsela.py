import numpy as np
import pytest
import scipy.sparse as sp

from hurdlemap.sparsela import NotPositiveDefiniteError, SpdFactor, nearest_spd


def random_spd(n, seed):
    rng = np.random.default_rng(seed)
    A = sp.random(n, n, density=0.05, random_state=np.random.RandomState(seed))
    Q = (A @ A.T + sp.eye(n) * n).tocsc()
    return Q


class TestSpdFactor:
    def test_logdet_matches_dense(self):
        Q = random_spd(60, 0)
        f = SpdFactor(Q)
        _, expected = np.linalg.slogdet(Q.toarray())
        assert f.logdet == pytest.approx(expected, rel=1e-10)

    def test_solve(self):
        Q = random_spd(40, 1)
        rng = np.random.default_rng(2)
        b = rng.standard_normal(40)
        x = SpdFactor(Q).solve(b)
        np.testing.assert_allclose(Q @ x, b, atol=1e-10)

    def test_sample_covariance(self):
        Q = random_spd(8, 3)
        f = SpdFactor(Q)
        X = f.sample(np.random.default_rng(4), 200_000)
        emp = np.cov(X)
        true = np.linalg.inv(Q.toarray())
        assert np.abs(emp - true).max() < 6 * np.abs(true).max() * np.sqrt(2 / 200_000)

    def test_sample_deterministic(self):
        Q = random_spd(10, 5)
        f = SpdFactor(Q)
        a = f.sample(np.random.default_rng(9), 50)
        b = f.sample(np.random.default_rng(9), 50)
        np.testing.assert_array_equal(a, b)

    def test_indefinite_rejected(self):
        Q = sp.diags([1.0, -1.0, 2.0]).tocsc()
        with pytest.raises(NotPositiveDefiniteError):
            SpdFactor(Q)


def test_nearest_spd_is_spd():
    A = np.array([[1.0, 2.0], [2.0, 1.0]])  # eigenvalues 3, -1
    B = nearest_spd(A)
    assert np.linalg.eigvalsh(B).min() > 0
