"""Projection of fitted components onto a space-time grid and posterior
exceedance probabilities.

For each grid cell and fitted year, linear-predictor samples are formed
from the posterior draws, outcome draws are taken from the observation
family, and the exceedance probability is the Monte Carlo proportion
landing in the target set: occurrence for the binary component, counts
above a threshold for the count component.  Predictions never leave the
fitted year range.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .engine import FitResult, latent_sample_chunks
from .geometry import RegionSet, point_in_polygon, points_in_polygon, project_points
from .likelihoods import FamilySpec, sample_family
from .models import ModelParts

EXCEEDANCE_SCHEMA = ("hurdlemap-exceedance", 1)
REGION_SCHEMA = ("hurdlemap-regions", 1)


def make_grid(boundary: np.ndarray, nx: int = 150, ny: int = 150):
    """Cell-center grid over the boundary's bounding box, clipped inside."""
    boundary = np.asarray(boundary, dtype=float)
    x0, y0 = boundary.min(axis=0)
    x1, y1 = boundary.max(axis=0)
    xs = x0 + (np.arange(nx) + 0.5) * (x1 - x0) / nx
    ys = y0 + (np.arange(ny) + 0.5) * (y1 - y0) / ny
    xx, yy = np.meshgrid(xs, ys)
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    return pts[points_in_polygon(pts, boundary)]


def prediction_design(parts: ModelParts, grid_points, years,
                      covariate_row=None) -> sp.csr_matrix:
    """Design matrix mapping the latent vector to grid cell-years.

    Rows are ordered cell-major within year: all cells of years[0], then
    years[1], and so on.  Fixed covariates default to the intercept-only
    row (reference categories everywhere).
    """
    model = parts.model
    grid_points = np.asarray(grid_points, dtype=float)
    years = np.asarray(years)
    missing = np.setdiff1d(years, parts.years)
    if missing.size:
        raise ValueError(f"years {missing.tolist()} outside the fitted range; "
                         "no temporal extrapolation")
    n_cells = len(grid_points)
    n_rows = n_cells * len(years)

    if covariate_row is None:
        covariate_row = np.zeros(model.p)
        covariate_row[0] = 1.0
    covariate_row = np.asarray(covariate_row, dtype=float)
    if covariate_row.shape != (model.p,):
        raise ValueError(f"covariate row must have length {model.p}")

    blocks = [sp.csr_matrix(np.tile(covariate_row, (n_rows, 1)))]
    for b in model.blocks:
        if b.kind == "spline":
            basis = b.meta["basis"]
            rows = sp.vstack([
                sp.csr_matrix(
                    np.tile(basis.evaluate([float(yr)]).toarray(), (n_cells, 1)))
                for yr in years], format="csr")
            blocks.append(rows)
        elif b.kind == "spatial":
            proj = project_points(b.meta["mesh"], grid_points)
            if not proj.inside.all():
                raise ValueError("grid points outside the mesh")
            blocks.append(sp.vstack([proj.matrix] * len(years), format="csr"))
        elif b.kind == "spacetime":
            proj = project_points(b.meta["mesh"], grid_points)
            if not proj.inside.all():
                raise ValueError("grid points outside the mesh")
            K = b.meta["mesh"].n_vertices
            n_years_fit = b.meta["n_years"]
            slabs = []
            for yr in years:
                t = int(np.searchsorted(parts.years, yr))
                coo = proj.matrix.tocoo()
                slabs.append(sp.csr_matrix(
                    (coo.data, (coo.row, coo.col + t * K)),
                    shape=(n_cells, K * n_years_fit)))
            blocks.append(sp.vstack(slabs, format="csr"))
        else:
            raise ValueError(f"unknown block kind {b.kind!r}")
    return sp.hstack(blocks, format="csr")


def project_field(fit: FitResult, parts: ModelParts, grid_points, years,
                  n_samples: int = 1000, seed: int = 0,
                  covariate_row=None, offset_log=None) -> np.ndarray:
    """Linear-predictor samples at grid cell-years, (rows, n_samples).

    Row ordering matches `prediction_design`.  Offsets default to zero;
    pass per-row log populations to reproduce the count component's
    predictor.  Materializes the full matrix, so keep cell counts modest
    and use `exceedance_grid` for full maps.
    """
    design = prediction_design(parts, grid_points, years, covariate_row)
    n_rows = design.shape[0]
    offset = np.zeros(n_rows) if offset_log is None else \
        np.asarray(offset_log, dtype=float)
    out = np.empty((n_rows, n_samples))
    done = 0
    for Z in latent_sample_chunks(fit, n_samples, seed):
        take = Z.shape[1]
        out[:, done:done + take] = offset[:, None] + design @ Z
        done += take
    return out


def exceedance_probability(eta_samples, family: FamilySpec, kind: str,
                           threshold: int = 0, seed: int = 0):
    """Monte Carlo exceedance from predictor samples.

    kind='occurrence'   P(outcome = 1) with outcome ~ Bernoulli(logit)
    kind='count_above'  P(count > threshold), counts drawn per sample
    """
    eta = np.atleast_2d(np.asarray(eta_samples, dtype=float))
    rng = np.random.default_rng(seed)
    if kind == "occurrence":
        draws = rng.random(eta.shape) < expit(eta)
        probs = draws.mean(axis=1)
    elif kind == "count_above":
        if threshold < 0:
            raise ValueError("count threshold must be nonnegative")
        counts = sample_family(family, eta.ravel(), rng).reshape(eta.shape)
        probs = (counts > threshold).mean(axis=1)
    else:
        raise ValueError(f"unknown exceedance kind {kind!r}")
    return probs if np.asarray(eta_samples).ndim > 1 else float(probs[0])


@dataclass
class ExceedanceGrid:
    points: np.ndarray            # (n_cells, 2)
    years: np.ndarray             # (T,)
    p_occur: np.ndarray           # (n_cells, T)
    p_exceed: np.ndarray          # (n_cells, T)
    threshold: int
    n_samples: int
    region_names: Optional[list] = None  # per-cell, None entries = outside
    region_summaries: list = field(default_factory=list)
    outside_cells: int = 0

    @property
    def mc_se_bound(self) -> float:
        return 0.5 / np.sqrt(self.n_samples)

    def to_csv(self) -> str:
        name, version = EXCEEDANCE_SCHEMA
        lines = [f"# {name} v{version}", "lon,lat,year,p_occur,p_exceed"]
        for t, year in enumerate(self.years):
            for i, (lon, lat) in enumerate(self.points):
                lines.append(
                    f"{float(lon)!r},{float(lat)!r},{int(year)},"
                    f"{float(self.p_occur[i, t])!r},"
                    f"{float(self.p_exceed[i, t])!r}")
        return "\n".join(lines) + "\n"


def exceedance_grid(binary_fit: FitResult, binary_parts: ModelParts,
                    count_fit: FitResult, count_parts: ModelParts,
                    grid_points, years, threshold: int = 20,
                    n_samples: int = 10_000, seed: int = 0,
                    covariate_row_binary=None, covariate_row_count=None,
                    regions: Optional[RegionSet] = None,
                    cell_chunk: int = 512) -> ExceedanceGrid:
    """Per-cell-per-year P(occurrence) and P(count > threshold).

    Cells are processed in chunks with chunk-derived seeds, so the map is
    deterministic for a fixed configuration.  When `regions` is given,
    the count component's offset uses the containing region's population
    for that year (cells outside every region get a zero offset and are
    excluded from the regional summaries).
    """
    if threshold < 0:
        raise ValueError("count threshold must be nonnegative")
    grid_points = np.asarray(grid_points, dtype=float)
    years = np.asarray(sorted(years))
    n_cells = len(grid_points)
    T = len(years)

    region_names = None
    offsets = np.zeros((n_cells, T))
    if regions is not None:
        from .geometry import locate_region

        region_names = []
        for i, pt in enumerate(grid_points):
            hit = None
            for region in regions:
                if point_in_polygon(pt, region.polygon):
                    hit = region.name
                    break
            region_names.append(hit)
            if hit is not None:
                region = next(r for r in regions if r.name == hit)
                for t, yr in enumerate(years):
                    offsets[i, t] = np.log(region.population[int(yr)])

    p_occur = np.zeros((n_cells, T))
    p_exceed = np.zeros((n_cells, T))

    for start in range(0, n_cells, cell_chunk):
        stop = min(start + cell_chunk, n_cells)
        cells = grid_points[start:stop]
        chunk_seed = seed + 104_729 * (start // cell_chunk)
        eta_b = project_field(binary_fit, binary_parts, cells, years,
                              n_samples=n_samples, seed=chunk_seed,
                              covariate_row=covariate_row_binary)
        off = offsets[start:stop].T.ravel()  # cell-major within year
        eta_c = project_field(count_fit, count_parts, cells, years,
                              n_samples=n_samples, seed=chunk_seed + 1,
                              covariate_row=covariate_row_count,
                              offset_log=off)
        po = exceedance_probability(eta_b, binary_fit.family, "occurrence",
                                    seed=chunk_seed + 2)
        pc = exceedance_probability(eta_c, count_fit.family, "count_above",
                                    threshold=threshold, seed=chunk_seed + 3)
        m = stop - start
        for t in range(T):
            p_occur[start:stop, t] = po[t * m:(t + 1) * m]
            p_exceed[start:stop, t] = pc[t * m:(t + 1) * m]

    grid = ExceedanceGrid(points=grid_points, years=years, p_occur=p_occur,
                          p_exceed=p_exceed, threshold=threshold,
                          n_samples=n_samples, region_names=region_names)
    if regions is not None:
        grid.region_summaries, grid.outside_cells = aggregate_regions(
            grid, regions)
    return grid


def aggregate_regions(grid: ExceedanceGrid, regions: RegionSet):
    """Unweighted per-region per-year means of the cell probabilities.

    Returns (summaries, n_outside_cells).  Regions without any interior
    cell are flagged in the summaries (n_cells = 0, no means) rather
    than contributing rows to the per-year table.
    """
    names = grid.region_names
    if names is None:
        names = []
        for pt in grid.points:
            hit = None
            for region in regions:
                if point_in_polygon(pt, region.polygon):
                    hit = region.name
                    break
            names.append(hit)
    names_arr = np.array([n if n is not None else "" for n in names])
    outside = int((names_arr == "").sum())
    summaries = []
    for region in regions:
        mask = names_arr == region.name
        if not mask.any():
            summaries.append({"region": region.name, "n_cells": 0,
                              "flag": "no interior cells"})
            continue
        for t, year in enumerate(grid.years):
            summaries.append({
                "region": region.name,
                "year": int(year),
                "n_cells": int(mask.sum()),
                "p_occur_mean": float(grid.p_occur[mask, t].mean()),
                "p_exceed_mean": float(grid.p_exceed[mask, t].mean()),
            })
    return summaries, outside


def region_summaries_geojson(summaries, regions: RegionSet,
                             threshold: int) -> str:
    """GeoJSON FeatureCollection of region polygons with summary tables."""
    name, version = REGION_SCHEMA
    by_region = {}
    for s in summaries:
        by_region.setdefault(s["region"], []).append(
            {k: v for k, v in s.items() if k != "region"})
    features = []
    for region in regions:
        ring = region.polygon.tolist()
        if ring[0] != ring[-1]:
            ring = ring + [ring[0]]
        features.append({
            "type": "Feature",
            "geometry": {"type": "Polygon", "coordinates": [ring]},
            "properties": {"name": region.name,
                           "summaries": by_region.get(region.name, [])},
        })
    doc = {"type": "FeatureCollection",
           "properties": {"schema": name, "version": version,
                          "count_threshold": threshold},
           "features": features}
    return json.dumps(doc)
