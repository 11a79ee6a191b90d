"""Sparse symmetric positive-definite factorization on top of SuperLU.

scipy has no sparse Cholesky, but SuperLU with symmetric mode and pivoting
disabled produces L, U with U = diag(U) @ L.T for SPD input, which is a
Cholesky factorization in disguise.  The wrapper below exposes the three
operations the rest of the package needs: log-determinant, solves, and
drawing zero-mean Gaussians with the factored matrix as precision.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu, spsolve_triangular


class NotPositiveDefiniteError(ValueError):
    """Raised when a matrix handed to SpdFactor is not numerically SPD."""


class SpdFactor:
    """Factorization Q[p][:, p] = L D L^T of a sparse SPD matrix Q.

    `p` is a fill-reducing permutation chosen by SuperLU.  Construction
    fails with NotPositiveDefiniteError if any pivot is non-positive or
    the factorization is not symmetric (both signal an indefinite Q).
    """

    def __init__(self, Q):
        Q = sp.csc_matrix(Q)
        if Q.shape[0] != Q.shape[1]:
            raise ValueError(f"matrix must be square, got {Q.shape}")
        self.dim = Q.shape[0]
        try:
            lu = splu(
                Q,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options=dict(SymmetricMode=True),
            )
        except RuntimeError as exc:  # singular matrix
            raise NotPositiveDefiniteError(str(exc)) from exc
        if not np.array_equal(lu.perm_r, lu.perm_c):
            raise NotPositiveDefiniteError("row/column permutations differ")
        d = lu.U.diagonal()
        if not np.all(d > 0):
            raise NotPositiveDefiniteError("non-positive pivot encountered")
        # U must equal diag(d) @ L.T or the input was not symmetric SPD.
        resid = abs(lu.U - sp.diags(d) @ lu.L.T).max()
        if resid > 1e-8 * max(d.max(), 1.0):
            raise NotPositiveDefiniteError(
                f"factorization asymmetric (residual {resid:.3e})"
            )
        self._lu = lu
        self._L_t = sp.csr_matrix(lu.L.T)
        self._d = d
        self._perm = lu.perm_r

    @property
    def logdet(self) -> float:
        return float(np.log(self._d).sum())

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve Q x = b for one or several right-hand sides."""
        return self._lu.solve(np.asarray(b, dtype=float))

    def sample(self, rng: np.random.Generator, n_samples: int) -> np.ndarray:
        """Draw N(0, Q^{-1}) samples, one per column of a (dim, n) array.

        With Q[p][:, p] = L D L^T the draw is x[p] = L^{-T} D^{-1/2} w.
        """
        w = rng.standard_normal((self.dim, n_samples))
        u = spsolve_triangular(self._L_t, w / np.sqrt(self._d)[:, None], lower=False)
        return u[self._perm, :]


def nearest_spd(A: np.ndarray, floor: float = 1e-10) -> np.ndarray:
    """Project a symmetric matrix onto the SPD cone by eigenvalue clipping."""
    A = 0.5 * (A + A.T)
    vals, vecs = np.linalg.eigh(A)
    vals = np.maximum(vals, floor * max(abs(vals).max(), 1.0))
    return (vecs * vals) @ vecs.T
