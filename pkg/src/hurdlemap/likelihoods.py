"""Observation families linked to a real-valued predictor eta.

All probability mass functions are evaluated in the log domain so that
counts in the thousands stay finite.  The count families use the
reparameterizations below, with mean/variance

    poisson      rate      = exp(eta)       mean lam,     var lam
    negbinomial  mu        = logistic(eta)  mean xi e^eta, var xi e^eta (1+e^eta)
    gpoisson     phi       = exp(eta)       mean phi,      var phi (1+disp)^2

The generalized Poisson keeps its power parameter fixed at 1 and its
dispersion restricted to >= 0 (no underdispersion).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit, gammaln

FAMILIES = ("bernoulli", "poisson", "negbinomial", "gpoisson")


@dataclass(frozen=True)
class FamilySpec:
    family: str
    dispersion: Optional[float] = None
    power_p: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.family == "negbinomial":
            if self.dispersion is None or self.dispersion <= 0:
                raise ValueError("negbinomial needs dispersion > 0")
        if self.family == "gpoisson":
            if self.dispersion is None or self.dispersion < 0:
                raise ValueError("gpoisson needs dispersion >= 0")
        if self.power_p != 1.0:
            raise ValueError("only power_p = 1 is supported")

    @property
    def has_dispersion(self) -> bool:
        return self.family in ("negbinomial", "gpoisson")

    def with_dispersion(self, value: float) -> "FamilySpec":
        return FamilySpec(self.family, float(value), self.power_p)


def _log1pexp(x):
    return np.logaddexp(0.0, x)


def _validate_counts(spec: FamilySpec, y):
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise ValueError("counts must be nonnegative")
    if spec.family == "bernoulli" and not np.all(np.isin(y, (0.0, 1.0))):
        raise ValueError("bernoulli outcomes must be 0 or 1")
    return y


def log_pmf(spec: FamilySpec, y, eta):
    """Exact log probability mass at y given the linear predictor."""
    y = _validate_counts(spec, y)
    eta = np.asarray(eta, dtype=float)
    if spec.family == "bernoulli":
        out = y * eta - _log1pexp(eta)
    elif spec.family == "poisson":
        out = y * eta - np.exp(eta) - gammaln(y + 1)
    elif spec.family == "negbinomial":
        xi = spec.dispersion
        # log mu = -log1pexp(-eta), log(1-mu) = -log1pexp(eta)
        out = (gammaln(y + xi) - gammaln(xi) - gammaln(y + 1)
               - y * _log1pexp(-eta) - xi * _log1pexp(eta))
    else:  # gpoisson
        a = spec.dispersion
        phi = np.exp(eta)
        out = (eta + (y - 1) * np.log(phi + a * y)
               - y * np.log1p(a) - gammaln(y + 1)
               - (phi + a * y) / (1.0 + a))
    return out if np.ndim(out) else float(out)


def dlog_pmf(spec: FamilySpec, y, eta):
    """First and second derivatives of log_pmf with respect to eta."""
    y = _validate_counts(spec, y)
    eta = np.asarray(eta, dtype=float)
    if spec.family == "bernoulli":
        p = expit(eta)
        d1 = y - p
        d2 = -p * (1.0 - p)
    elif spec.family == "poisson":
        lam = np.exp(eta)
        d1 = y - lam
        d2 = -lam
    elif spec.family == "negbinomial":
        xi = spec.dispersion
        mu = expit(eta)
        d1 = y - (y + xi) * mu
        d2 = -(y + xi) * mu * (1.0 - mu)
    else:  # gpoisson
        a = spec.dispersion
        phi = np.exp(eta)
        denom = phi + a * y
        d1 = 1.0 + (y - 1) * phi / denom - phi / (1.0 + a)
        d2 = (y - 1) * phi * a * y / denom**2 - phi / (1.0 + a)
    if np.ndim(d1):
        return d1, d2
    return float(d1), float(d2)


def family_mean(spec: FamilySpec, eta):
    eta = np.asarray(eta, dtype=float)
    if spec.family == "bernoulli":
        out = expit(eta)
    elif spec.family == "poisson":
        out = np.exp(eta)
    elif spec.family == "negbinomial":
        out = spec.dispersion * np.exp(eta)
    else:
        out = np.exp(eta)
    return out if np.ndim(out) else float(out)


def family_variance(spec: FamilySpec, eta):
    eta = np.asarray(eta, dtype=float)
    if spec.family == "bernoulli":
        p = expit(eta)
        out = p * (1 - p)
    elif spec.family == "poisson":
        out = np.exp(eta)
    elif spec.family == "negbinomial":
        out = spec.dispersion * np.exp(eta) * (1.0 + np.exp(eta))
    else:
        out = np.exp(eta) * (1.0 + spec.dispersion) ** 2
    return out if np.ndim(out) else float(out)


def zero_inflated_pmf(pi_occur, spec: FamilySpec, y, eta):
    """Mixture mass: (1 - pi) 1[y=0] + pi * family pmf.

    Used by the simulation oracle and tests only; the fitting pipeline is
    the sequential two-part decomposition, not this mixture.
    """
    pi_occur = np.asarray(pi_occur, dtype=float)
    if np.any((pi_occur < 0) | (pi_occur > 1)):
        raise ValueError("occurrence probability must lie in [0, 1]")
    y_arr = np.asarray(y, dtype=float)
    out = (1.0 - pi_occur) * (y_arr == 0) + pi_occur * np.exp(log_pmf(spec, y, eta))
    return out if np.ndim(out) else float(out)


def family_cdf(spec: FamilySpec, y, eta):
    """P(Y <= y) elementwise, for the PIT diagnostics."""
    from scipy import stats

    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if spec.family == "bernoulli":
        p = expit(eta)
        return np.where(y >= 1, 1.0, np.where(y >= 0, 1.0 - p, 0.0))
    if spec.family == "poisson":
        return stats.poisson.cdf(y, np.exp(eta))
    if spec.family == "negbinomial":
        mu = expit(eta)
        return stats.nbinom.cdf(y, spec.dispersion, 1.0 - mu)
    # gpoisson: accumulate the pmf
    y_b, eta_b = np.broadcast_arrays(y, eta)
    out = np.zeros(y_b.shape)
    y_max = int(y_b.max()) if y_b.size else 0
    cum = np.zeros(eta_b.shape)
    for k in range(y_max + 1):
        cum = cum + np.exp(log_pmf(spec, np.full(eta_b.shape, float(k)), eta_b))
        out = np.where(y_b >= k, cum, out)
    out = np.where(y_b < 0, 0.0, np.minimum(out, 1.0))
    return out


def sample_family(spec: FamilySpec, eta, rng: np.random.Generator):
    """One draw per predictor value."""
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    if spec.family == "bernoulli":
        return (rng.random(eta.shape) < expit(eta)).astype(np.int64)
    if spec.family == "poisson":
        return rng.poisson(np.exp(eta))
    if spec.family == "negbinomial":
        mu = expit(eta)
        return rng.negative_binomial(spec.dispersion, 1.0 - mu)
    return _sample_gpoisson(spec, eta, rng)


def _sample_gpoisson(spec: FamilySpec, eta, rng, tail=1e-12):
    """Inversion on the pmf with a cumulative-tail cutoff."""
    u = rng.random(eta.shape)
    out = np.zeros(eta.shape, dtype=np.int64)
    cum = np.exp(log_pmf(spec, np.zeros_like(eta), eta))
    mean = family_mean(spec, eta)
    sd = np.sqrt(family_variance(spec, eta))
    y_cap = int(np.max(mean + 20 * sd)) + 200
    pending = u > cum
    k = 0
    while pending.any() and k < y_cap:
        k += 1
        cum = cum + np.exp(log_pmf(spec, np.full(eta.shape, float(k)), eta))
        out[pending] = k
        pending = (u > cum) & (cum < 1.0 - tail)
    return out
