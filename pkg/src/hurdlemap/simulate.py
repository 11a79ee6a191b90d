"""Synthetic data with known truth, plus a dense reference fitter.

The simulator draws every latent effect from its exact prior using dense
factorizations, forms the linear predictors of the chosen structural
form, and generates two-part data: an occurrence indicator first, then a
count from the configured family when the process is active.  Zeros are
labeled by mechanism so threshold-classification accuracy is measurable.

The dense reference fitter targets the same posterior as the sparse
engine but is written separately against plain numpy arrays; it exists
solely to cross-check the engine at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from .engine import EngineError, Model
from .fields import Ar1Params, SpdeParams, spde_precision, unit_variance_ar1
from .geometry import Mesh, assemble_fem, build_mesh, project_points
from .likelihoods import FamilySpec, dlog_pmf, log_pmf, sample_family
from .models import StructureConfig, build_component

MAX_FIELD_DIM = 5000


@dataclass
class SimulationConfig:
    n: int = 1000
    n_years: int = 5
    mesh_max_edge: float = 2.5
    domain_size: float = 10.0
    structural_form: str = "II"
    family: str = "negbinomial"
    dispersion: Optional[float] = 1.5
    beta_binary: np.ndarray = field(default_factory=lambda: np.array([1.5, -3.0]))
    beta_count: np.ndarray = field(default_factory=lambda: np.array([0.8, 0.5]))
    spde: SpdeParams = field(default_factory=lambda: SpdeParams(3.0, 1.0))
    ar1: Ar1Params = field(default_factory=lambda: Ar1Params(0.6))
    n_covariates: int = 1  # binary covariates beyond the intercept
    first_year: int = 2001
    offset_log: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.beta_binary = np.asarray(self.beta_binary, dtype=float)
        self.beta_count = np.asarray(self.beta_count, dtype=float)
        p = 1 + self.n_covariates
        if self.beta_binary.shape != (p,) or self.beta_count.shape != (p,):
            raise ValueError(f"coefficient vectors must have length {p}")


@dataclass
class SimulatedData:
    y: np.ndarray
    design: np.ndarray
    offset_log: np.ndarray
    points: np.ndarray
    years: np.ndarray
    mesh: Mesh
    truth: dict

    def truth_json(self) -> str:
        import json

        t = self.truth
        doc = {k: (v.tolist() if isinstance(v, np.ndarray) else v)
               for k, v in t.items()}
        return json.dumps(doc)


def _sample_field_dense(Q_dense: np.ndarray, rng: np.random.Generator):
    L = np.linalg.cholesky(Q_dense)
    w = rng.standard_normal(Q_dense.shape[0])
    from scipy.linalg import solve_triangular

    return solve_triangular(L.T, w, lower=False)


def simulate_dataset(cfg: SimulationConfig) -> SimulatedData:
    rng = np.random.default_rng(cfg.seed)
    box = np.array([[0.0, 0.0], [cfg.domain_size, 0.0],
                    [cfg.domain_size, cfg.domain_size], [0.0, cfg.domain_size]])
    points = rng.uniform(0, cfg.domain_size, size=(cfg.n, 2))
    years = cfg.first_year + rng.integers(0, cfg.n_years, size=cfg.n)
    unique_years = np.arange(cfg.first_year, cfg.first_year + cfg.n_years)

    X = np.column_stack(
        [np.ones(cfg.n)]
        + [rng.integers(0, 2, size=cfg.n).astype(float)
           for _ in range(cfg.n_covariates)])

    mesh = build_mesh(points, box, max_edge=cfg.mesh_max_edge)
    fem = assemble_fem(mesh)
    K = mesh.n_vertices
    T = cfg.n_years if cfg.structural_form == "II" else 1
    if K * T > MAX_FIELD_DIM:
        raise ValueError(f"field dimension {K * T} exceeds the desk-scale "
                         f"limit {MAX_FIELD_DIM}")

    proj = project_points(mesh, points).matrix
    year_idx = np.searchsorted(unique_years, years)

    def draw_field():
        Qs = spde_precision(fem, cfg.spde).matrix.toarray()
        if cfg.structural_form == "II":
            Qt = unit_variance_ar1(cfg.n_years, cfg.ar1.correlation).matrix.toarray()
            full = _sample_field_dense(np.kron(Qt, Qs), rng)
            at_obs = np.array([
                proj[i].toarray().ravel() @ full[year_idx[i] * K:(year_idx[i] + 1) * K]
                for i in range(cfg.n)])
            return full, at_obs
        if cfg.structural_form == "I":
            full = _sample_field_dense(Qs, rng)
            return full, proj @ full
        return np.zeros(0), np.zeros(cfg.n)

    field_b, field_b_obs = draw_field()
    field_c, field_c_obs = draw_field()

    offset = np.full(cfg.n, cfg.offset_log)
    eta_b = X @ cfg.beta_binary + field_b_obs
    eta_c = offset + X @ cfg.beta_count + field_c_obs

    pi = expit(eta_b)
    occurrence = rng.random(cfg.n) < pi

    fam = FamilySpec(cfg.family, cfg.dispersion)
    counts = sample_family(fam, eta_c, rng)
    y = np.where(occurrence, counts, 0).astype(np.int64)
    structural_zero = ~occurrence

    truth = dict(
        beta_binary=cfg.beta_binary, beta_count=cfg.beta_count,
        field_binary=field_b, field_count=field_c,
        eta_binary=eta_b, eta_count=eta_c, pi=pi,
        occurrence=occurrence.astype(int),
        structural_zero=structural_zero.astype(int),
        family=cfg.family, dispersion=cfg.dispersion,
        spde_range=cfg.spde.range, spde_sd=cfg.spde.marginal_sd,
        ar1_correlation=cfg.ar1.correlation,
        structural_form=cfg.structural_form, seed=cfg.seed,
    )
    return SimulatedData(y=y, design=X, offset_log=offset, points=points,
                         years=years, mesh=mesh, truth=truth)


def component_parts(sim: SimulatedData, which: str, cfg: SimulationConfig,
                    structure: Optional[StructureConfig] = None):
    """Model parts for the binary or count component of a simulation."""
    structure = structure or StructureConfig(form=cfg.structural_form)
    if which == "binary":
        return build_component(
            (sim.y > 0).astype(float), sim.design, np.zeros(cfg.n),
            sim.points, sim.years, FamilySpec("bernoulli"), structure,
            mesh=sim.mesh)
    if which == "count":
        return build_component(
            sim.y.astype(float), sim.design, sim.offset_log,
            sim.points, sim.years, FamilySpec(cfg.family, cfg.dispersion),
            structure, mesh=sim.mesh)
    raise ValueError("component must be 'binary' or 'count'")


# ---------------------------------------------------------------------------
# Dense reference implementation (oracle)
# ---------------------------------------------------------------------------

MAX_DENSE_DIM = 520


@dataclass
class DenseLaplace:
    mode: np.ndarray
    precision: np.ndarray
    logdet: float
    log_marginal: float
    loglik_vec: np.ndarray


def dense_laplace(model: Model, hyper) -> DenseLaplace:
    """Dense-matrix Laplace approximation at fixed hyperparameters.

    Independent of the sparse engine: plain numpy Newton iterations,
    numpy solves, and slogdet determinants.
    """
    if model.dim > MAX_DENSE_DIM:
        raise ValueError(f"latent dimension {model.dim} exceeds the dense "
                         f"reference limit {MAX_DENSE_DIM}")
    hyper = np.asarray(hyper, dtype=float)
    Qp = model.prior_precision(hyper).toarray()
    A = model.design_full.toarray()
    fam = model.family_at(hyper)
    y, off = model.y, model.offset

    x = np.zeros(model.dim)

    def objective(xv):
        eta = off + A @ xv
        return float(log_pmf(fam, y, eta).sum() - 0.5 * xv @ Qp @ xv), eta

    f_cur, eta = objective(x)
    for _ in range(200):
        d1, d2 = dlog_pmf(fam, y, eta)
        grad = A.T @ d1 - Qp @ x
        if np.abs(grad).max() < 1e-11:
            break
        W = np.maximum(-d2, 0.0)
        H = Qp + (A.T * W) @ A
        step = np.linalg.solve(H, grad)
        t = 1.0
        for _ in range(40):
            f_new, eta_new = objective(x + t * step)
            if np.isfinite(f_new) and f_new >= f_cur - 1e-12 * abs(f_cur):
                x, f_cur, eta = x + t * step, f_new, eta_new
                break
            t *= 0.5
        else:
            break
    else:
        raise EngineError("dense reference Newton did not converge")

    _, d2 = dlog_pmf(fam, y, eta)
    Qstar = Qp + (A.T * (-d2)) @ A
    sign, logdet_post = np.linalg.slogdet(Qstar)
    if sign <= 0:
        Qstar = Qp + (A.T * np.maximum(-d2, 0.0)) @ A
        _, logdet_post = np.linalg.slogdet(Qstar)
    _, logdet_prior = np.linalg.slogdet(Qp)
    ll = log_pmf(fam, y, eta)
    lm = (float(ll.sum()) - 0.5 * float(x @ Qp @ x)
          + 0.5 * logdet_prior - 0.5 * logdet_post
          + model.log_prior_hyper(hyper))
    return DenseLaplace(mode=x, precision=Qstar, logdet=float(logdet_post),
                        log_marginal=float(lm), loglik_vec=ll)


def dense_reference_fit(model: Model, init=None):
    """Hyperparameter optimization on top of the dense Laplace."""
    from scipy.optimize import minimize

    if model.n_hyper == 0:
        return dense_laplace(model, np.empty(0)), np.empty(0)
    x0 = model.hyper_init() if init is None else np.asarray(init, dtype=float)

    def negative(hv):
        try:
            return -dense_laplace(model, hv).log_marginal
        except (EngineError, np.linalg.LinAlgError):
            return np.inf

    res = minimize(negative, x0, method="Nelder-Mead",
                   options=dict(maxfev=500, xatol=1e-3,
                                fatol=1e-6 * max(1.0, abs(negative(x0)))))
    return dense_laplace(model, res.x), np.asarray(res.x)
