"""Model-adequacy criteria computed from posterior samples.

WAIC and DIC use the standard sample-based estimators; CPO is the
harmonic-mean importance approximation of the leave-one-out predictive
density, and the probability integral transform uses the midpoint
convention for discrete outcomes (CDF at y minus half the mass at y).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .likelihoods import FamilySpec, family_cdf, log_pmf

MIN_SAMPLES = 100


def _check_matrix(loglik_matrix, mask):
    ll = np.asarray(loglik_matrix, dtype=float)
    if ll.ndim != 2:
        raise ValueError("expected an (n_samples, n_obs) log-likelihood matrix")
    if ll.shape[0] < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} posterior samples, "
                         f"got {ll.shape[0]}")
    if mask is None:
        mask = np.ones(ll.shape[1], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (ll.shape[1],):
        raise ValueError("mask length must match the observation count")
    return ll, mask


def compute_waic(loglik_matrix, mask=None):
    """(waic, p_waic) over the masked observations.

    lppd sums log of the sample-average likelihood per observation;
    p_waic sums the per-observation sample variance of the log
    likelihood; waic = -2 (lppd - p_waic).
    """
    ll, mask = _check_matrix(loglik_matrix, mask)
    sub = ll[:, mask]
    S = sub.shape[0]
    lppd = float((logsumexp(sub, axis=0) - np.log(S)).sum())
    p_waic = float(sub.var(axis=0, ddof=1).sum())
    return -2.0 * (lppd - p_waic), p_waic


def compute_dic(loglik_at_mean, loglik_matrix, mask=None):
    """(dic, p_dic); p_dic may be negative and is reported as computed."""
    ll, mask = _check_matrix(loglik_matrix, mask)
    at_mean = np.asarray(loglik_at_mean, dtype=float)
    if at_mean.shape != (ll.shape[1],):
        raise ValueError("per-observation log-likelihood length mismatch")
    d_bar = -2.0 * float(ll[:, mask].sum(axis=1).mean())
    d_hat = -2.0 * float(at_mean[mask].sum())
    p_dic = d_bar - d_hat
    return d_hat + 2.0 * p_dic, p_dic


def compute_cpo_pit(loglik_matrix, y, family: FamilySpec, eta_samples,
                    mask=None):
    """Harmonic-mean CPO and midpoint PIT per observation.

    Returns (cpo, pit, underflow_indices); underflowed observations get
    cpo = 0 and are listed rather than silently clipped.
    """
    ll, mask = _check_matrix(loglik_matrix, mask)
    eta = np.asarray(eta_samples, dtype=float)
    if eta.shape != ll.shape:
        raise ValueError("eta sample matrix must match the log-likelihood matrix")
    y = np.asarray(y, dtype=float)
    S = ll.shape[0]

    with np.errstate(over="ignore"):
        log_inv_cpo = logsumexp(-ll, axis=0) - np.log(S)
    cpo = np.exp(-log_inv_cpo)
    underflow = np.flatnonzero(~np.isfinite(log_inv_cpo) & mask)
    cpo[~np.isfinite(log_inv_cpo)] = 0.0

    cdf = family_cdf(family, y[None, :], eta)
    pmf = np.exp(log_pmf(family, np.broadcast_to(y, eta.shape), eta))
    pit = (cdf - 0.5 * pmf).mean(axis=0)
    return cpo, pit, underflow


@dataclass
class AdequacyReport:
    dic: float
    waic: float
    p_dic: float
    p_waic: float
    cpo: np.ndarray
    pit: np.ndarray
    underflow_indices: np.ndarray
    n_samples: int

    def summary_json(self) -> str:
        return json.dumps({
            "dic": self.dic, "waic": self.waic,
            "effective_params_dic": self.p_dic,
            "effective_params_waic": self.p_waic,
            "n_samples": self.n_samples,
            "n_cpo_underflow": int(self.underflow_indices.size),
        })

    def per_observation_csv(self) -> str:
        lines = ["index,cpo,pit"]
        lines += [f"{i},{c!r},{p!r}"
                  for i, (c, p) in enumerate(zip(self.cpo, self.pit))]
        return "\n".join(lines) + "\n"


def adequacy_report(fit, n_samples: int = 4000, seed: int = 0,
                    mask=None) -> AdequacyReport:
    """Full adequacy summary for one fitted component.

    Streams over posterior sample chunks so the (samples x observations)
    matrices never materialize beyond one chunk.
    """
    from .engine import linear_predictor_samples

    model = fit.model
    if model is None:
        raise ValueError("fit carries no model; cannot sample predictors")
    if n_samples < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples")
    n = model.n
    if mask is None:
        mask = np.ones(n, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    y = model.y
    fam = fit.family

    count = 0
    mean_ll = np.zeros(n)
    m2_ll = np.zeros(n)
    sum_inv_lik = np.zeros(n)
    sum_pit = np.zeros(n)
    lse = None

    for eta_chunk in linear_predictor_samples(fit, n_samples, seed=seed):
        etaT = eta_chunk.T  # (chunk, n)
        ll = log_pmf(fam, np.broadcast_to(y, etaT.shape), etaT)
        for row in ll:
            count += 1
            delta = row - mean_ll
            mean_ll += delta / count
            m2_ll += delta * (row - mean_ll)
        with np.errstate(over="ignore"):
            sum_inv_lik += np.exp(-ll).sum(axis=0)
        cdf = family_cdf(fam, y[None, :], etaT)
        pmf = np.exp(ll)
        sum_pit += (cdf - 0.5 * pmf).sum(axis=0)
        chunk_lse = logsumexp(ll, axis=0)
        lse = chunk_lse if lse is None else np.logaddexp(lse, chunk_lse)

    var_ll = m2_ll / (count - 1)
    lppd = float((lse[mask] - np.log(count)).sum())
    p_waic = float(var_ll[mask].sum())
    waic = -2.0 * (lppd - p_waic)

    d_bar = -2.0 * float(mean_ll[mask].sum())
    d_hat = -2.0 * float(fit.per_obs_loglik[mask].sum())
    p_dic = d_bar - d_hat
    dic = d_hat + 2.0 * p_dic

    with np.errstate(divide="ignore"):
        cpo = count / sum_inv_lik
    underflow = np.flatnonzero(~np.isfinite(cpo) & mask)
    cpo[~np.isfinite(cpo)] = 0.0
    pit = sum_pit / count

    return AdequacyReport(dic=dic, waic=waic, p_dic=p_dic, p_waic=p_waic,
                          cpo=cpo, pit=pit, underflow_indices=underflow,
                          n_samples=count)
