"""Sparse precision matrices for the latent effects and their priors.

Covers the Matern field discretized through its defining differential
operator on the mesh (smoothness fixed at nu=1, so operator power
alpha=2), stationary AR(1) blocks in time, their Kronecker combination,
cubic B-spline bases for smooth temporal trends, and the penalized
complexity priors used on all hyperparameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq
from scipy.special import kv

from .geometry import FemMatrices


@dataclass(frozen=True)
class SpdeParams:
    """Matern field parameters: practical range (degrees) and marginal sd."""

    range: float
    marginal_sd: float
    nu: float = 1.0

    def __post_init__(self):
        if self.range <= 0:
            raise ValueError("range must be positive")
        if self.marginal_sd <= 0:
            raise ValueError("marginal_sd must be positive")
        if self.nu != 1.0:
            raise ValueError("only smoothness nu=1 is supported")

    @property
    def kappa(self) -> float:
        return np.sqrt(8.0 * self.nu) / self.range


@dataclass(frozen=True)
class Ar1Params:
    correlation: float
    precision_scale: float = 1.0

    def __post_init__(self):
        if not abs(self.correlation) < 1:
            raise ValueError("AR(1) correlation must lie in (-1, 1)")
        if self.precision_scale <= 0:
            raise ValueError("precision scale must be positive")


@dataclass(frozen=True)
class PrecisionBlock:
    """Sparse SPD precision with a label naming the effect it prices."""

    matrix: sp.csc_matrix
    dim: int
    label: str

    def __post_init__(self):
        asym = abs(self.matrix - self.matrix.T).max()
        scale = max(abs(self.matrix).max(), 1.0)
        if asym > 1e-12 * scale:
            raise ValueError(f"precision block {self.label!r} not symmetric")


def matern_covariance(d, params: SpdeParams):
    """Matern covariance at distance d: sigma^2 (kd) K_1(kd), nu=1."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("distances must be nonnegative")
    kd = params.kappa * d
    with np.errstate(invalid="ignore", over="ignore"):
        out = params.marginal_sd**2 * kd * kv(1, kd)
    out = np.where(kd == 0, params.marginal_sd**2, out)
    out = np.nan_to_num(out, nan=0.0)  # kv underflows to nan for huge kd
    return out if out.ndim else float(out)


def spde_precision(fem: FemMatrices, params: SpdeParams) -> PrecisionBlock:
    """Precision of the mesh-discretized Matern field (alpha = 2).

    Q = tau^2 (k^4 C + 2 k^2 G + G C^{-1} G) with lumped mass C and
    stiffness G, and tau = 1 / (sigma * kappa * sqrt(4 pi)) so that the
    stationary marginal variance equals sigma^2.
    """
    k = params.kappa
    tau = 1.0 / (params.marginal_sd * k * np.sqrt(4.0 * np.pi))
    c = fem.mass_lumped
    C = sp.diags(c)
    Cinv = sp.diags(1.0 / c)
    G = fem.stiffness
    Q = tau**2 * (k**4 * C + 2.0 * k**2 * G + G @ Cinv @ G)
    Q = sp.csc_matrix(0.5 * (Q + Q.T))
    return PrecisionBlock(matrix=Q, dim=Q.shape[0], label="spatial")


def ar1_precision(n_times: int, params: Ar1Params) -> PrecisionBlock:
    """Tridiagonal stationary AR(1) precision.

    Diagonal tau*(1, 1+rho^2, ..., 1+rho^2, 1), off-diagonal -tau*rho.
    """
    if n_times < 1:
        raise ValueError("need at least one time point")
    rho, tau = params.correlation, params.precision_scale
    diag = np.full(n_times, (1.0 + rho**2) * tau)
    diag[0] = diag[-1] = tau
    if n_times == 1:
        Q = sp.csc_matrix(np.array([[tau]]))
    else:
        off = np.full(n_times - 1, -rho * tau)
        Q = sp.diags([off, diag, off], [-1, 0, 1], format="csc")
    return PrecisionBlock(matrix=Q, dim=n_times, label="temporal")


def unit_variance_ar1(n_times: int, correlation: float) -> PrecisionBlock:
    """AR(1) precision scaled so the stationary marginal variance is 1."""
    tau = 1.0 / (1.0 - correlation**2)
    if n_times == 1:
        return PrecisionBlock(sp.csc_matrix(np.eye(1)), 1, "temporal")
    return ar1_precision(n_times, Ar1Params(correlation, tau))


def space_time_precision(spatial: PrecisionBlock,
                         temporal: PrecisionBlock) -> PrecisionBlock:
    """Kronecker product Q_time (x) Q_space, time-major ordering.

    Index t*K + k addresses mesh node k in time slice t, matching the
    block layout used when stacking per-year projector slabs.
    """
    Q = sp.kron(temporal.matrix, spatial.matrix, format="csc")
    return PrecisionBlock(matrix=Q, dim=spatial.dim * temporal.dim,
                          label="space-time")


# ---------------------------------------------------------------------------
# Cubic B-spline basis for smooth temporal trends
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplineBasis:
    """Clamped cubic B-spline basis with n_basis functions.

    `knots` are the equally spaced breakpoints spanning the data years;
    `matrix` holds the basis evaluated at the construction years.
    """

    knots: np.ndarray
    matrix: sp.csr_matrix
    n_basis: int

    def evaluate(self, years) -> sp.csr_matrix:
        return _spline_design(np.asarray(years, dtype=float), self.knots,
                              self.n_basis)


def _spline_design(x: np.ndarray, breakpoints: np.ndarray, n_basis: int):
    from scipy.interpolate import BSpline

    lo, hi = breakpoints[0], breakpoints[-1]
    x = np.clip(x, lo, hi)
    t = np.r_[[lo] * 4, breakpoints[1:-1], [hi] * 4]
    return sp.csr_matrix(BSpline.design_matrix(x, t, 3))


def build_spline_basis(years, n_basis: int) -> SplineBasis:
    if n_basis < 4:
        raise ValueError("cubic basis needs at least 4 functions")
    years = np.asarray(years, dtype=float)
    if np.unique(years).size < n_basis:
        raise ValueError("need at least n_basis distinct years")
    breakpoints = np.linspace(years.min(), years.max(), n_basis - 2)
    return SplineBasis(knots=breakpoints,
                       matrix=_spline_design(years, breakpoints, n_basis),
                       n_basis=n_basis)


def default_knot_count(n_years: int) -> int:
    """One basis function per ~3 years, never fewer than 6."""
    return max(6, int(np.ceil(n_years / 3)) + 3)


# ---------------------------------------------------------------------------
# Penalized complexity priors
# ---------------------------------------------------------------------------


class PriorSpecError(ValueError):
    """Raised for unattainable or invalid tail-probability statements."""


def _check_quantile(threshold, prob):
    if not (0.0 < prob < 1.0):
        raise PriorSpecError(f"tail probability {prob} must be in (0, 1)")
    return float(threshold), float(prob)


def pc_prior_logpdf(kind: str, value, threshold: float, prob: float):
    """Log-density of the penalized complexity prior family.

    kind='range'       P(range < threshold) = prob; inverse-exponential
                       (type-2 Gumbel) density on the range.
    kind='sd'          P(sd > threshold) = prob; exponential on the sd.
    kind='precision'   P(precision > threshold) = prob; the exponential
                       prior on sd = precision^{-1/2}, transformed.
    kind='correlation' P(corr > threshold) = prob with base model corr=1.
    """
    u, a = _check_quantile(threshold, prob)
    v = np.asarray(value, dtype=float)
    if kind == "range":
        if u <= 0:
            raise PriorSpecError("range threshold must be positive")
        lam = -u * np.log(a)
        with np.errstate(divide="ignore"):
            out = np.where(v > 0, np.log(lam) - 2 * np.log(v) - lam / v, -np.inf)
    elif kind == "sd":
        if u <= 0:
            raise PriorSpecError("sd threshold must be positive")
        lam = -np.log(a) / u
        out = np.where(v >= 0, np.log(lam) - lam * v, -np.inf)
    elif kind == "precision":
        if u <= 0:
            raise PriorSpecError("precision threshold must be positive")
        lam = -np.log1p(-a) * np.sqrt(u)
        with np.errstate(divide="ignore"):
            out = np.where(v > 0,
                           np.log(lam / 2) - 1.5 * np.log(v) - lam / np.sqrt(v),
                           -np.inf)
    elif kind == "correlation":
        theta = _pc_cor_rate(u, a)
        d = np.sqrt(np.maximum(1.0 - v, 0.0))
        norm = 1.0 - np.exp(-theta * np.sqrt(2.0))
        with np.errstate(divide="ignore"):
            out = np.where(
                (v > -1) & (v < 1),
                np.log(theta) - theta * d - np.log(2 * d) - np.log(norm),
                -np.inf)
    else:
        raise PriorSpecError(f"unknown prior kind {kind!r}")
    return out if out.ndim else float(out)


def _pc_cor_rate(threshold: float, prob: float) -> float:
    """Rate of the distance-scale exponential for the correlation prior.

    Distance from the base model corr=1 is d = sqrt(1 - corr), truncated
    to d < sqrt(2).  P(corr > u) = P(d < d(u)) determines the rate; the
    statement is attainable only for prob in (d(u)/sqrt(2), 1).
    """
    if not (-1.0 < threshold < 1.0):
        raise PriorSpecError("correlation threshold must be in (-1, 1)")
    du = np.sqrt(1.0 - threshold)
    lo = du / np.sqrt(2.0)
    if not (lo < prob < 1.0):
        raise PriorSpecError(
            f"P(corr > {threshold}) = {prob} unattainable; need prob in "
            f"({lo:.4f}, 1)")

    def gap(theta):
        return (1 - np.exp(-theta * du)) / (1 - np.exp(-theta * np.sqrt(2))) - prob

    return brentq(gap, 1e-10, 1e4)
