"""Structural linear predictors assembled from mesh, years, and design.

Three forms are supported for either model component:

  baseline  fixed effects only
  I         fixed effects + cubic spline trend in time + spatial field
  II        fixed effects + one spatial field per year coupled by a
            stationary AR(1) across years (space-time interaction)

The binary component carries no offset; the count component offsets the
log predictor by log population of the containing region.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .engine import HyperParam, LatentBlock, Model, ModelSpec, assemble
from .fields import (
    Ar1Params,
    SpdeParams,
    ar1_precision,
    build_spline_basis,
    default_knot_count,
    spde_precision,
    space_time_precision,
    unit_variance_ar1,
)
from .geometry import FemMatrices, Mesh, assemble_fem, project_points
from .likelihoods import FamilySpec

STRUCTURAL_FORMS = ("baseline", "I", "II")


@dataclass(frozen=True)
class PriorConfig:
    """Tail-probability statements for the PC priors, one per kind."""

    range_: tuple = (1.42, 0.9)
    sd: tuple = (1.0, 0.9)
    precision: tuple = (0.5, 0.9)
    correlation: tuple = (0.0, 0.9)


@dataclass
class StructureConfig:
    form: str = "II"
    n_spline_basis: Optional[int] = None
    priors: PriorConfig = field(default_factory=PriorConfig)
    init_range: float = 1.0
    init_sd: float = 1.0
    init_correlation: float = 0.5
    init_spline_precision: float = 1.0

    def __post_init__(self):
        if self.form not in STRUCTURAL_FORMS:
            raise ValueError(f"structural form must be one of {STRUCTURAL_FORMS}")


def spatial_block(mesh: Mesh, fem: FemMatrices, points,
                  cfg: StructureConfig) -> LatentBlock:
    proj = project_points(mesh, points)
    if not proj.inside.all():
        raise ValueError("spatial block: some observations fall outside the mesh")
    pri = cfg.priors
    hyper = (
        HyperParam("spatial_range", "log", ("pc", "range", *pri.range_),
                   init=float(np.log(cfg.init_range))),
        HyperParam("spatial_sd", "log", ("pc", "sd", *pri.sd),
                   init=float(np.log(cfg.init_sd))),
    )

    def make_precision(values):
        r, sd = values
        return spde_precision(fem, SpdeParams(range=r, marginal_sd=sd)).matrix

    def make_logdet(values):
        from .sparsela import SpdFactor

        return SpdFactor(make_precision(values)).logdet

    return LatentBlock("spatial", proj.matrix, hyper, make_precision,
                       make_logdet, meta={"mesh": mesh, "fem": fem})


def spacetime_block(mesh: Mesh, fem: FemMatrices, points, year_index,
                    n_years: int, cfg: StructureConfig) -> LatentBlock:
    """Time-major slab projector: observation i hits the columns of its
    year's copy of the mesh basis."""
    proj = project_points(mesh, points)
    if not proj.inside.all():
        raise ValueError("space-time block: some observations fall outside the mesh")
    year_index = np.asarray(year_index, dtype=int)
    if year_index.min() < 0 or year_index.max() >= n_years:
        raise ValueError("year index out of range")
    K = mesh.n_vertices
    coo = proj.matrix.tocoo()
    cols = coo.col + year_index[coo.row] * K
    slab = sp.csr_matrix((coo.data, (coo.row, cols)),
                         shape=(proj.matrix.shape[0], K * n_years))
    pri = cfg.priors
    hyper = (
        HyperParam("spacetime_range", "log", ("pc", "range", *pri.range_),
                   init=float(np.log(cfg.init_range))),
        HyperParam("spacetime_sd", "log", ("pc", "sd", *pri.sd),
                   init=float(np.log(cfg.init_sd))),
        HyperParam("spacetime_cor", "atanh", ("pc", "correlation",
                                              *pri.correlation),
                   init=float(np.arctanh(cfg.init_correlation))),
    )

    def make_precision(values):
        r, sd, rho = values
        spatial = spde_precision(fem, SpdeParams(range=r, marginal_sd=sd))
        # unit-variance AR(1) coupling keeps sd as the field's marginal sd
        return space_time_precision(spatial, unit_variance_ar1(n_years, rho)).matrix

    def make_logdet(values):
        from .sparsela import SpdFactor

        r, sd, rho = values
        spatial = spde_precision(fem, SpdeParams(range=r, marginal_sd=sd))
        temporal = unit_variance_ar1(n_years, rho)
        _, ld_t = np.linalg.slogdet(temporal.matrix.toarray())
        return (spatial.dim * ld_t
                + n_years * SpdFactor(spatial.matrix).logdet)

    return LatentBlock("spacetime", slab, hyper, make_precision, make_logdet,
                       meta={"mesh": mesh, "fem": fem, "n_years": n_years})


def spline_block(years, cfg: StructureConfig) -> LatentBlock:
    years = np.asarray(years, dtype=float)
    n_basis = cfg.n_spline_basis or default_knot_count(np.unique(years).size)
    basis = build_spline_basis(years, n_basis)
    pri = cfg.priors
    hyper = (
        HyperParam("trend_precision", "log", ("pc", "precision", *pri.precision),
                   init=float(np.log(cfg.init_spline_precision))),
        HyperParam("trend_cor", "atanh", ("pc", "correlation", *pri.correlation),
                   init=float(np.arctanh(cfg.init_correlation))),
    )

    def make_precision(values):
        tau, rho = values
        return ar1_precision(n_basis, Ar1Params(rho, tau)).matrix

    def make_logdet(values):
        _, ld = np.linalg.slogdet(make_precision(values).toarray())
        return ld

    return LatentBlock("spline", basis.matrix, hyper, make_precision,
                       make_logdet, meta={"basis": basis})


@dataclass
class ModelParts:
    """Everything needed to assemble (and later project) one component."""

    model: Model
    mesh: Optional[Mesh]
    fem: Optional[FemMatrices]
    years: np.ndarray  # sorted unique years backing the time index
    config: StructureConfig


def year_index_of(years_obs, unique_years) -> np.ndarray:
    idx = np.searchsorted(unique_years, years_obs)
    if (np.asarray(unique_years)[idx] != np.asarray(years_obs)).any():
        raise ValueError("observation year outside the fitted year set")
    return idx


def build_component(y, design_fixed, offset_log, points, years_obs,
                    family: FamilySpec, cfg: StructureConfig,
                    mesh: Optional[Mesh] = None,
                    fem: Optional[FemMatrices] = None) -> ModelParts:
    """Assemble one model component under the configured structural form."""
    years_obs = np.asarray(years_obs)
    unique_years = np.unique(years_obs)
    blocks = []
    if cfg.form in ("I", "II") and mesh is None:
        raise ValueError(f"structural form {cfg.form} requires a mesh")
    if mesh is not None and fem is None:
        fem = assemble_fem(mesh)
    if cfg.form == "I":
        blocks.append(spline_block(years_obs, cfg))
        blocks.append(spatial_block(mesh, fem, points, cfg))
    elif cfg.form == "II":
        idx = year_index_of(years_obs, unique_years)
        blocks.append(spacetime_block(mesh, fem, points, idx,
                                      len(unique_years), cfg))
    spec = ModelSpec(y=y, design_fixed=design_fixed, offset_log=offset_log,
                     blocks=blocks, family=family, structural_form=cfg.form)
    return ModelParts(model=assemble(spec), mesh=mesh, fem=fem,
                      years=unique_years, config=cfg)


def subset_component(parts: ModelParts, keep: np.ndarray, y_new,
                     family: Optional[FamilySpec] = None) -> ModelParts:
    """Row-restricted copy of a component with a new response.

    Used by the hurdle stage: the count model drops structural zeros and
    swaps the response while keeping every prior and projector column.
    """
    model = parts.model
    keep = np.asarray(keep)
    spec = model.spec
    new_spec = ModelSpec(
        y=np.asarray(y_new, dtype=float),
        design_fixed=np.atleast_2d(np.asarray(spec.design_fixed))[keep],
        offset_log=np.asarray(spec.offset_log)[keep],
        blocks=[b.slice_rows(keep) for b in model.blocks],
        family=family or spec.family,
        structural_form=spec.structural_form,
        beta_prior_precision=spec.beta_prior_precision,
        dispersion_prior_sd=spec.dispersion_prior_sd,
    )
    return ModelParts(model=assemble(new_spec), mesh=parts.mesh,
                      fem=parts.fem, years=parts.years, config=parts.config)
