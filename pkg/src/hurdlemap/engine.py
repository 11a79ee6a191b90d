"""Latent Gaussian models with empirical-Bayes Laplace inference.

A model couples a fixed-effect design, an optional log offset, and any
number of latent blocks (spline trend, spatial field, space-time field),
each contributing a projector column-slab and a sparse prior precision
driven by its hyperparameters.  Inference proceeds in two nested loops:

  inner   Newton iterations with step halving locate the conditional
          posterior mode of the latent vector given hyperparameters,
          yielding a Gaussian (Laplace) approximation there;
  outer   Nelder-Mead climbs the Laplace-approximate log marginal of the
          hyperparameters on an unconstrained scale.

Hyperparameters stay fixed at their optimum for downstream sampling, so
posterior credible statements condition on the estimated hyperparameters
rather than integrating over them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize

from .likelihoods import FamilySpec, dlog_pmf, log_pmf
from .sparsela import NotPositiveDefiniteError, SpdFactor, nearest_spd

FIT_FORMAT = "hurdlemap-fit"
FIT_VERSION = 1


class EngineError(RuntimeError):
    """Inference failure; carries the last gradient norm when relevant."""

    def __init__(self, message, grad_norm=None):
        super().__init__(message)
        self.grad_norm = grad_norm


# ---------------------------------------------------------------------------
# Hyperparameters on an unconstrained scale
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HyperParam:
    """One hyperparameter: transform to its natural domain plus a prior.

    `transform` is 'log' (positive quantities) or 'atanh' (correlations).
    `prior` is ('pc', kind, threshold, prob) for a penalized complexity
    prior on the natural scale, or ('normal', mean, sd) applied directly
    on the unconstrained scale.
    """

    name: str
    transform: str
    prior: tuple
    init: float = 0.0

    def constrain(self, v: float) -> float:
        if self.transform == "log":
            return float(np.exp(v))
        if self.transform == "atanh":
            return float(np.tanh(v))
        raise ValueError(f"unknown transform {self.transform!r}")

    def log_prior(self, v: float) -> float:
        """Prior log-density on the unconstrained scale (Jacobian included)."""
        if self.prior[0] == "normal":
            _, mean, sd = self.prior
            return float(-0.5 * ((v - mean) / sd) ** 2
                         - np.log(sd) - 0.5 * np.log(2 * np.pi))
        from .fields import pc_prior_logpdf

        _, kind, threshold, prob = self.prior
        x = self.constrain(v)
        lp = pc_prior_logpdf(kind, x, threshold, prob)
        if self.transform == "log":
            jac = v
        else:  # atanh
            jac = np.log1p(-x * x) if abs(x) < 1 else -np.inf
        return float(lp + jac)


@dataclass
class LatentBlock:
    """A latent effect: projector slab plus hyper-driven prior precision.

    `make_logdet`, when provided, computes the precision log-determinant
    directly from the block's structure (e.g. Kronecker factors), saving
    a factorization of the assembled matrix per marginal evaluation.
    """

    kind: str  # 'spline' | 'spatial' | 'spacetime'
    projector: sp.csr_matrix
    hyper: Sequence[HyperParam]
    make_precision: Callable[[Sequence[float]], sp.csc_matrix]
    make_logdet: Optional[Callable[[Sequence[float]], float]] = None
    meta: dict = field(default_factory=dict)

    RANK = {"spline": 0, "spatial": 1, "spacetime": 2}

    @property
    def dim(self) -> int:
        return self.projector.shape[1]

    def slice_rows(self, keep: np.ndarray) -> "LatentBlock":
        return LatentBlock(self.kind, self.projector[keep], self.hyper,
                           self.make_precision, self.make_logdet, self.meta)


@dataclass
class ModelSpec:
    """Response, fixed design, offset, latent blocks, and family."""

    y: np.ndarray
    design_fixed: np.ndarray
    offset_log: np.ndarray
    blocks: Sequence[LatentBlock]
    family: FamilySpec
    structural_form: str = "baseline"
    beta_prior_precision: float = 1e-4
    dispersion_prior_sd: float = 5.0


class Model:
    """Validated model with a fixed latent ordering [beta | blocks...]."""

    def __init__(self, spec: ModelSpec):
        y = np.asarray(spec.y, dtype=float)
        X = np.atleast_2d(np.asarray(spec.design_fixed, dtype=float))
        offset = np.asarray(spec.offset_log, dtype=float)
        n = y.shape[0]
        if X.shape[0] != n or offset.shape[0] != n:
            raise ValueError("response, design, and offset sizes disagree")
        blocks = sorted(spec.blocks, key=lambda b: LatentBlock.RANK[b.kind])
        for b in blocks:
            if b.projector.shape[0] != n:
                raise ValueError(f"block {b.kind!r}: projector has "
                                 f"{b.projector.shape[0]} rows, expected {n}")
            init = [h.constrain(h.init) for h in b.hyper]
            Q = b.make_precision(init)
            if Q.shape != (b.dim, b.dim):
                raise ValueError(f"block {b.kind!r}: precision is {Q.shape}, "
                                 f"projector has {b.dim} columns")
        self.spec = spec
        self.y = y
        self.offset = offset
        self.n = n
        self.p = X.shape[1]
        self.blocks = blocks
        self.design_full = sp.hstack(
            [sp.csr_matrix(X)] + [b.projector for b in blocks], format="csr")
        self.dim = self.design_full.shape[1]

        self.hyper_params: list[HyperParam] = []
        self._block_hyper_slices = []
        pos = 0
        for b in blocks:
            self.hyper_params.extend(b.hyper)
            self._block_hyper_slices.append(slice(pos, pos + len(b.hyper)))
            pos += len(b.hyper)
        self._dispersion_index = None
        if spec.family.has_dispersion:
            disp0 = spec.family.dispersion
            self.hyper_params.append(HyperParam(
                name="dispersion", transform="log",
                prior=("normal", 0.0, spec.dispersion_prior_sd),
                init=float(np.log(disp0))))
            self._dispersion_index = pos

    @property
    def n_hyper(self) -> int:
        return len(self.hyper_params)

    def hyper_init(self) -> np.ndarray:
        return np.array([h.init for h in self.hyper_params], dtype=float)

    def hyper_names(self) -> list:
        return [h.name for h in self.hyper_params]

    def family_at(self, hyper: np.ndarray) -> FamilySpec:
        if self._dispersion_index is None:
            return self.spec.family
        disp = np.exp(hyper[self._dispersion_index])
        return self.spec.family.with_dispersion(disp)

    def constrained_hyper(self, hyper: np.ndarray) -> dict:
        return {h.name: h.constrain(v)
                for h, v in zip(self.hyper_params, hyper)}

    def prior_precision(self, hyper: np.ndarray) -> sp.csc_matrix:
        mats = [self.spec.beta_prior_precision * sp.eye(self.p, format="csc")]
        for b, sl in zip(self.blocks, self._block_hyper_slices):
            values = [h.constrain(v) for h, v in zip(b.hyper, hyper[sl])]
            mats.append(sp.csc_matrix(b.make_precision(values)))
        return sp.block_diag(mats, format="csc")

    def log_prior_hyper(self, hyper: np.ndarray) -> float:
        return float(sum(h.log_prior(v)
                         for h, v in zip(self.hyper_params, hyper)))

    def prior_logdet(self, hyper: np.ndarray) -> float:
        out = self.p * np.log(self.spec.beta_prior_precision)
        for b, sl in zip(self.blocks, self._block_hyper_slices):
            values = [h.constrain(v) for h, v in zip(b.hyper, hyper[sl])]
            if b.make_logdet is not None:
                out += b.make_logdet(values)
            else:
                out += SpdFactor(sp.csc_matrix(b.make_precision(values))).logdet
        return float(out)

    def block_slices(self) -> dict:
        """Column ranges of each part in the latent vector."""
        out = {"fixed": slice(0, self.p)}
        pos = self.p
        for b in self.blocks:
            out[b.kind] = slice(pos, pos + b.dim)
            pos += b.dim
        return out


def assemble(spec: ModelSpec) -> Model:
    return Model(spec)


# ---------------------------------------------------------------------------
# Inner Newton: conditional posterior mode of the latent vector
# ---------------------------------------------------------------------------


@dataclass
class InnerResult:
    mode: np.ndarray
    precision: sp.csc_matrix
    factor: SpdFactor
    loglik_vec: np.ndarray
    curvature_clipped: bool
    n_iter: int


def inner_mode(model: Model, hyper: np.ndarray, x0=None,
               gtol: float = 1e-6, gtol_target: float = 1e-9,
               max_iter: int = 50, max_halvings: int = 30) -> InnerResult:
    """Newton with step halving on the latent log posterior.

    Convergence requires max |gradient| < `gtol` within `max_iter`
    iterations; iterations continue down to `gtol_target` when cheap so
    the mode is resolved well past the contract tolerance.
    """
    hyper = np.asarray(hyper, dtype=float)
    if hyper.shape != (model.n_hyper,):
        raise ValueError(f"expected {model.n_hyper} hyperparameters, "
                         f"got {hyper.shape}")
    Qp = model.prior_precision(hyper)
    fam = model.family_at(hyper)
    A = model.design_full
    y = model.y

    x = np.zeros(model.dim) if x0 is None else np.asarray(x0, dtype=float).copy()

    def objective(xv):
        eta = model.offset + A @ xv
        ll = log_pmf(fam, y, eta)
        return float(ll.sum() - 0.5 * xv @ (Qp @ xv)), eta

    f_cur, eta = objective(x)
    if not np.isfinite(f_cur):
        raise EngineError("log posterior not finite at the starting point")

    grad_norm = np.inf
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        d1, d2 = dlog_pmf(fam, y, eta)
        grad = A.T @ d1 - Qp @ x
        grad_norm = float(np.abs(grad).max())
        if grad_norm < gtol_target:
            break
        W = np.maximum(-d2, 0.0)
        H = (Qp + A.T @ sp.diags(W) @ A).tocsc()
        try:
            step = SpdFactor(H).solve(grad)
        except NotPositiveDefiniteError as exc:
            raise EngineError(f"inner Hessian not SPD: {exc}",
                              grad_norm=grad_norm) from exc
        t = 1.0
        accepted = False
        for _ in range(max_halvings + 1):
            cand = x + t * step
            f_new, eta_new = objective(cand)
            if np.isfinite(f_new) and f_new >= f_cur - 1e-12 * abs(f_cur):
                x, f_cur, eta = cand, f_new, eta_new
                accepted = True
                break
            t *= 0.5
        if not accepted:
            if grad_norm < gtol:
                break
            raise EngineError(
                f"line search stalled at gradient norm {grad_norm:.3e}",
                grad_norm=grad_norm)
    else:
        d1, _ = dlog_pmf(fam, y, eta)
        grad_norm = float(np.abs(A.T @ d1 - Qp @ x).max())
        if grad_norm >= gtol:
            raise EngineError(
                f"Newton did not converge in {max_iter} iterations "
                f"(gradient norm {grad_norm:.3e})", grad_norm=grad_norm)

    _, d2 = dlog_pmf(fam, y, eta)
    clipped = False
    Qstar = (Qp + A.T @ sp.diags(-d2) @ A).tocsc()
    try:
        factor = SpdFactor(Qstar)
    except NotPositiveDefiniteError:
        # exact curvature indefinite (possible for gpoisson); fall back to
        # the clipped curvature, which is SPD by construction
        clipped = True
        Qstar = (Qp + A.T @ sp.diags(np.maximum(-d2, 0.0)) @ A).tocsc()
        factor = SpdFactor(Qstar)

    return InnerResult(mode=x, precision=Qstar, factor=factor,
                       loglik_vec=log_pmf(fam, y, eta),
                       curvature_clipped=clipped, n_iter=n_iter)


def log_marginal_hyper(model: Model, hyper: np.ndarray,
                       x0=None) -> tuple:
    """Laplace-integrated log marginal of the hyperparameters.

    Returns (value, InnerResult).  The Gaussian normalization constants
    of the latent prior and the Laplace approximation cancel except for
    their log-determinants.
    """
    hyper = np.asarray(hyper, dtype=float)
    inner = inner_mode(model, hyper, x0=x0)
    Qp = model.prior_precision(hyper)
    quad = -0.5 * float(inner.mode @ (Qp @ inner.mode))
    value = (float(inner.loglik_vec.sum()) + quad
             + 0.5 * model.prior_logdet(hyper) - 0.5 * inner.factor.logdet
             + model.log_prior_hyper(hyper))
    if not np.isfinite(value):
        raise EngineError("log marginal evaluated to a non-finite value")
    return value, inner


# ---------------------------------------------------------------------------
# Outer optimization and the fit container
# ---------------------------------------------------------------------------


@dataclass
class FitResult:
    latent_mode: np.ndarray
    latent_precision: sp.csc_matrix
    hyper_mode: np.ndarray
    hyper_names: list
    hyper_constrained: dict
    hyper_covariance: np.ndarray
    log_marginal: float
    per_obs_loglik: np.ndarray
    family: FamilySpec
    structural_form: str
    hessian_warning: bool = False
    curvature_clipped: bool = False
    n_marginal_evals: int = 0
    model: Optional[Model] = None
    metadata: dict = field(default_factory=dict)
    _factor: Optional[SpdFactor] = None

    @property
    def factor(self) -> SpdFactor:
        if self._factor is None:
            self._factor = SpdFactor(self.latent_precision)
        return self._factor

    def latent_sd(self) -> np.ndarray:
        """Marginal posterior standard deviations of the latent vector.

        Computed column by column from the sparse factorization; intended
        for desk-scale models.
        """
        dim = self.latent_precision.shape[0]
        eye = np.eye(dim)
        cov_diag = np.array([self.factor.solve(eye[:, j])[j]
                             for j in range(dim)])
        return np.sqrt(np.maximum(cov_diag, 0.0))


def optimize_hyper(model: Model, init=None, max_evals: int = 500,
                   rel_tol: float = 1e-6, xatol: float = 1e-2,
                   hessian_step: float = 1e-3) -> FitResult:
    """Maximize the Laplace log marginal over the hyperparameters.

    Nelder-Mead on the unconstrained scale; the hyper covariance comes
    from a central finite-difference Hessian at the optimum.  Models with
    no hyperparameters short-circuit to a single inner optimization.
    Inner Newton runs warm-start from the previous evaluation's mode;
    the mode is converged far past the point where the starting value
    could matter, so the optimization path stays reproducible.
    """
    meta = {"hyper_intervals":
            "gaussian approximation on the unconstrained scale"}
    if model.n_hyper == 0:
        value, inner = log_marginal_hyper(model, np.empty(0))
        return FitResult(
            latent_mode=inner.mode, latent_precision=inner.precision,
            hyper_mode=np.empty(0), hyper_names=[], hyper_constrained={},
            hyper_covariance=np.empty((0, 0)), log_marginal=value,
            per_obs_loglik=inner.loglik_vec, family=model.spec.family,
            structural_form=model.spec.structural_form,
            curvature_clipped=inner.curvature_clipped,
            n_marginal_evals=1, model=model, metadata=meta,
            _factor=inner.factor)

    x0 = model.hyper_init() if init is None else np.asarray(init, dtype=float)
    evals = {"n": 0, "ok": 0}
    warm = {"mode": None}

    def negative(hv):
        evals["n"] += 1
        try:
            value, inner = log_marginal_hyper(model, hv, x0=warm["mode"])
        except (EngineError, NotPositiveDefiniteError, FloatingPointError):
            return np.inf
        evals["ok"] += 1
        warm["mode"] = inner.mode
        return -value

    f0 = negative(x0)
    if not np.isfinite(f0):
        raise EngineError("log marginal failed at the initial hyperparameters")

    # Nelder-Mead with an explicit simplex scale (scipy's default barely
    # perturbs zero coordinates) and restart rounds: each round re-inflates
    # the simplex at the incumbent until no material improvement remains
    # or the evaluation budget is spent.
    fatol = rel_tol * max(1.0, abs(f0))
    m = model.n_hyper
    best_x, best_f = x0, f0
    step = 0.3
    for _ in range(4):
        budget = max_evals - evals["n"]
        if budget <= m + 2:
            break
        simplex = np.vstack([best_x] + [best_x + step * np.eye(m)[i]
                                        for i in range(m)])
        res = minimize(negative, best_x, method="Nelder-Mead",
                       options=dict(maxfev=budget, xatol=xatol, fatol=fatol,
                                    initial_simplex=simplex,
                                    adaptive=m > 3))
        improved = res.fun < best_f - max(fatol, 1e-9)
        if res.fun < best_f:
            best_x, best_f = np.asarray(res.x, dtype=float), float(res.fun)
        if not improved:
            break
        step = max(0.5 * step, 0.05)
    if evals["ok"] == 0:
        raise EngineError("every hyperparameter evaluation failed")
    opt = best_x

    value, inner = log_marginal_hyper(model, opt, x0=warm["mode"])

    hessian_warning = False
    m = model.n_hyper
    H = np.zeros((m, m))
    h = hessian_step

    def f_or_nan(hv):
        try:
            return log_marginal_hyper(model, hv, x0=inner.mode)[0]
        except (EngineError, NotPositiveDefiniteError):
            return np.nan

    for i in range(m):
        for j in range(i, m):
            ei, ej = np.zeros(m), np.zeros(m)
            ei[i], ej[j] = h, h
            if i == j:
                fp = f_or_nan(opt + ei)
                fm = f_or_nan(opt - ei)
                H[i, i] = (fp - 2 * value + fm) / h**2
            else:
                fpp = f_or_nan(opt + ei + ej)
                fpm = f_or_nan(opt + ei - ej)
                fmp = f_or_nan(opt - ei + ej)
                fmm = f_or_nan(opt - ei - ej)
                H[i, j] = H[j, i] = (fpp - fpm - fmp + fmm) / (4 * h**2)
    neg_H = -H
    if np.isnan(neg_H).any() or np.linalg.eigvalsh(
            0.5 * (neg_H + neg_H.T)).min() <= 0:
        hessian_warning = True
        neg_H = nearest_spd(np.nan_to_num(neg_H, nan=0.0), floor=1e-8)
    hyper_cov = np.linalg.inv(0.5 * (neg_H + neg_H.T))

    return FitResult(
        latent_mode=inner.mode, latent_precision=inner.precision,
        hyper_mode=opt, hyper_names=model.hyper_names(),
        hyper_constrained=model.constrained_hyper(opt),
        hyper_covariance=hyper_cov, log_marginal=value,
        per_obs_loglik=inner.loglik_vec,
        family=model.family_at(opt),
        structural_form=model.spec.structural_form,
        hessian_warning=hessian_warning,
        curvature_clipped=inner.curvature_clipped,
        n_marginal_evals=evals["n"], model=model, metadata=meta,
        _factor=inner.factor)


def sample_posterior(fit: FitResult, n_samples: int, seed: int) -> np.ndarray:
    """Draws from the Gaussian approximation, one row per sample."""
    rng = np.random.default_rng(seed)
    Z = fit.factor.sample(rng, n_samples)
    return (Z + fit.latent_mode[:, None]).T


def latent_sample_chunks(fit: FitResult, n_samples: int, seed: int,
                         chunk: int = 500):
    """Yield posterior latent draws in (dim, <=chunk) blocks.

    The chunking scheme fixes the random-draw order, so any consumer
    using the same seed and chunk size sees identical latent samples.
    """
    rng = np.random.default_rng(seed)
    done = 0
    while done < n_samples:
        take = min(chunk, n_samples - done)
        yield fit.factor.sample(rng, take) + fit.latent_mode[:, None]
        done += take


def linear_predictor_samples(fit: FitResult, n_samples: int, seed: int,
                             chunk: int = 500):
    """Yield (offset + design @ latent) sample chunks of shape (n, <=chunk)."""
    model = fit.model
    if model is None:
        raise EngineError("fit carries no model; cannot form predictors")
    for Z in latent_sample_chunks(fit, n_samples, seed, chunk):
        yield model.offset[:, None] + model.design_full @ Z


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def fit_to_json(fit: FitResult) -> str:
    coo = sp.coo_matrix(fit.latent_precision)
    doc = {
        "format": FIT_FORMAT,
        "version": FIT_VERSION,
        "structural_form": fit.structural_form,
        "family": {"family": fit.family.family,
                   "dispersion": fit.family.dispersion,
                   "power_p": fit.family.power_p},
        "latent_mode": fit.latent_mode.tolist(),
        "latent_precision": {
            "shape": list(coo.shape),
            "row": coo.row.tolist(),
            "col": coo.col.tolist(),
            "data": coo.data.tolist(),
        },
        "hyper": {
            "names": list(fit.hyper_names),
            "mode_unconstrained": fit.hyper_mode.tolist(),
            "constrained": fit.hyper_constrained,
            "covariance": fit.hyper_covariance.tolist(),
        },
        "log_marginal": fit.log_marginal,
        "per_obs_loglik": fit.per_obs_loglik.tolist(),
        "flags": {"hessian_warning": fit.hessian_warning,
                  "curvature_clipped": fit.curvature_clipped},
        "n_marginal_evals": fit.n_marginal_evals,
        "metadata": fit.metadata,
    }
    return json.dumps(doc)


def fit_from_json(text: str) -> FitResult:
    doc = json.loads(text)
    if doc.get("format") != FIT_FORMAT:
        raise ValueError("not a fit container")
    if doc.get("version") != FIT_VERSION:
        raise ValueError(f"unsupported fit container version {doc.get('version')}")
    pr = doc["latent_precision"]
    Q = sp.coo_matrix((pr["data"], (pr["row"], pr["col"])),
                      shape=tuple(pr["shape"])).tocsc()
    fam = doc["family"]
    return FitResult(
        latent_mode=np.array(doc["latent_mode"]),
        latent_precision=Q,
        hyper_mode=np.array(doc["hyper"]["mode_unconstrained"]),
        hyper_names=list(doc["hyper"]["names"]),
        hyper_constrained=dict(doc["hyper"]["constrained"]),
        hyper_covariance=np.array(doc["hyper"]["covariance"]).reshape(
            len(doc["hyper"]["names"]), -1) if doc["hyper"]["names"]
        else np.empty((0, 0)),
        log_marginal=doc["log_marginal"],
        per_obs_loglik=np.array(doc["per_obs_loglik"]),
        family=FamilySpec(fam["family"], fam["dispersion"], fam["power_p"]),
        structural_form=doc["structural_form"],
        hessian_warning=doc["flags"]["hessian_warning"],
        curvature_clipped=doc["flags"]["curvature_clipped"],
        n_marginal_evals=doc["n_marginal_evals"],
        metadata=doc.get("metadata", {}),
    )
