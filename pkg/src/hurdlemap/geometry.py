"""Triangulated meshes, linear finite elements, and region lookups.

Coordinates are planar degrees throughout: longitude is x, latitude is y,
and no great-circle correction is applied.  Meshes are built by Delaunay
triangulation of a seeded point set and refined until no edge inside the
study boundary exceeds the requested maximum length.  An outer extension
band (at least 20% of the domain diameter, meshed roughly twice as
coarsely) surrounds the boundary so that the random-field models built on
top of the mesh do not feel the artificial domain edge.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.spatial import Delaunay, QhullError


class MeshError(ValueError):
    """Raised for degenerate or inconsistent mesh construction input."""


@dataclass(frozen=True)
class Point:
    lon: float
    lat: float

    def __post_init__(self):
        if not (-180.0 <= self.lon <= 180.0):
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")
        if not (-90.0 <= self.lat <= 90.0):
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")


def _as_xy(points) -> np.ndarray:
    """Accept (n,2) arrays, sequences of pairs, or sequences of Point."""
    if len(points) and isinstance(points[0], Point):
        return np.array([(p.lon, p.lat) for p in points], dtype=float)
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("expected an (n, 2) array of lon/lat pairs")
    return arr


def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Signed areas; positive for counter-clockwise vertex order."""
    p = vertices[triangles]
    return 0.5 * (
        (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
        - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
    )


@dataclass
class Mesh:
    """Conforming triangulation: vertices (K,2), triangles (M,3) indices."""

    vertices: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray
    _delaunay: Optional[Delaunay] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.triangles = np.asarray(self.triangles, dtype=int)
        self.boundary = np.asarray(self.boundary, dtype=float)
        areas = triangle_areas(self.vertices, self.triangles)
        flipped = areas < 0
        if flipped.any():
            self.triangles = self.triangles.copy()
            self.triangles[flipped] = self.triangles[flipped][:, ::-1]
            areas = np.abs(areas)
        bad = np.flatnonzero(areas <= 0)
        if bad.size:
            raise MeshError(f"degenerate triangle(s) at index {bad.tolist()}")

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def edges(self) -> np.ndarray:
        """Unique undirected edges as an (E, 2) index array."""
        tri = self.triangles
        e = np.vstack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)


def _hex_grid(x0, x1, y0, y1, h, clip_inside=True) -> np.ndarray:
    """Staggered grid of spacing h over the box, avoiding collinear rows."""
    xs = np.arange(x0, x1 + 0.5 * h, h)
    ys = np.arange(y0, y1 + 0.5 * h, h)
    pts = []
    for j, y in enumerate(ys):
        off = 0.5 * h if j % 2 else 0.0
        row_x = xs + off
        if clip_inside:
            row_x = row_x[(row_x > x0) & (row_x < x1)]
        pts.extend((x, y) for x in row_x)
    return np.array(pts, dtype=float) if pts else np.empty((0, 2))


def point_in_polygon(p, polygon: np.ndarray, edge_tol: float = 1e-12) -> bool:
    """Even-odd rule, with points on the boundary counted as inside."""
    x, y = (p.lon, p.lat) if isinstance(p, Point) else (float(p[0]), float(p[1]))
    poly = np.asarray(polygon, dtype=float)
    n = len(poly)
    inside = False
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        # on-segment check
        dx, dy = x2 - x1, y2 - y1
        cross = dx * (y - y1) - dy * (x - x1)
        seg2 = dx * dx + dy * dy
        if abs(cross) <= edge_tol * max(1.0, seg2) and seg2 > 0:
            t = ((x - x1) * dx + (y - y1) * dy) / seg2
            if -edge_tol <= t <= 1 + edge_tol:
                return True
        if (y1 > y) != (y2 > y):
            x_cross = x1 + (y - y1) * dx / dy
            if x < x_cross:
                inside = not inside
    return inside


def points_in_polygon(pts: np.ndarray, polygon: np.ndarray) -> np.ndarray:
    """Vectorized even-odd test (boundary points may fall either way)."""
    pts = np.asarray(pts, dtype=float)
    poly = np.asarray(polygon, dtype=float)
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if y1 == y2:
            continue
        crosses = (y1 > y) != (y2 > y)
        x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < x_cross)
    return inside


def build_mesh(points, boundary=None, max_edge: float = 0.5,
               extension: float = 0.2, max_refine: int = 14,
               include_points: bool = False) -> Mesh:
    """Delaunay mesh covering `boundary` plus a coarser outer band.

    points    data locations that must be covered by the triangulation
    boundary  closed polygon of the study domain; convex hull of the
              points when omitted
    max_edge  maximum allowed edge length (degrees) inside the boundary
    extension band width as a fraction of the domain diameter; values
              below the 0.2 floor are raised to it
    include_points  seed mesh vertices at the data locations themselves;
              off by default so resolution is governed by max_edge alone
    """
    if max_edge <= 0:
        raise MeshError("max_edge must be positive")
    pts = _as_xy(points)
    if boundary is None:
        if len(pts) < 3:
            raise MeshError("need at least 3 points to infer a boundary")
        try:
            from scipy.spatial import ConvexHull

            hull = ConvexHull(pts)
        except QhullError as exc:
            raise MeshError(f"degenerate input points: {exc}") from exc
        boundary = pts[hull.vertices]
    boundary = _as_xy(boundary)
    if len(boundary) < 3:
        raise MeshError("boundary polygon needs at least 3 vertices")

    diam = float(np.max(np.linalg.norm(
        boundary[:, None, :] - boundary[None, :, :], axis=2)))
    if diam <= 0:
        raise MeshError("boundary has zero diameter")
    band = max(extension, 0.2) * diam

    bx0, by0 = boundary.min(axis=0)
    bx1, by1 = boundary.max(axis=0)
    ex0, ey0, ex1, ey1 = bx0 - band, by0 - band, bx1 + band, by1 + band

    h_in = max_edge / np.sqrt(2.0)
    h_out = 2.0 * h_in
    inner = _hex_grid(bx0, bx1, by0, by1, h_in)
    if inner.size:
        inner = inner[points_in_polygon(inner, boundary)]
    outer = _hex_grid(ex0, ex1, ey0, ey1, h_out)
    if outer.size:
        keep = ~points_in_polygon(outer, boundary)
        # keep strictly inside the extension box so the hull stays rectangular
        keep &= (outer[:, 0] > ex0) & (outer[:, 0] < ex1)
        keep &= (outer[:, 1] > ey0) & (outer[:, 1] < ey1)
        outer = outer[keep]
    # ring pinning the rectangular hull of the extended domain
    n_ring = max(2, int(np.ceil((ex1 - ex0) / h_out)) + 1)
    m_ring = max(2, int(np.ceil((ey1 - ey0) / h_out)) + 1)
    rx = np.linspace(ex0, ex1, n_ring)
    ry = np.linspace(ey0, ey1, m_ring)
    ring = np.vstack([
        np.column_stack([rx, np.full(n_ring, ey0)]),
        np.column_stack([rx, np.full(n_ring, ey1)]),
        np.column_stack([np.full(m_ring, ex0), ry]),
        np.column_stack([np.full(m_ring, ex1), ry]),
    ])

    parts = [boundary, ring]
    if include_points:
        parts.insert(0, pts)
    if inner.size:
        parts.append(inner)
    if outer.size:
        parts.append(outer)
    verts = np.vstack(parts)
    verts = np.unique(np.round(verts, 9), axis=0)

    tri = None
    for _ in range(max_refine):
        try:
            tri = Delaunay(verts)
        except QhullError as exc:
            raise MeshError(f"triangulation failed: {exc}") from exc
        e = np.vstack([tri.simplices[:, [0, 1]],
                       tri.simplices[:, [1, 2]],
                       tri.simplices[:, [2, 0]]])
        e.sort(axis=1)
        e = np.unique(e, axis=0)
        seg = verts[e]
        lengths = np.linalg.norm(seg[:, 0] - seg[:, 1], axis=1)
        mids = 0.5 * (seg[:, 0] + seg[:, 1])
        long_inside = (lengths > max_edge) & points_in_polygon(mids, boundary)
        if not long_inside.any():
            break
        verts = np.unique(np.round(np.vstack([verts, mids[long_inside]]), 9), axis=0)
    else:
        raise MeshError("edge refinement did not converge; decrease max_edge")

    areas = np.abs(triangle_areas(verts, tri.simplices))
    keep = areas > 1e-14 * max(1.0, areas.max())
    return Mesh(verts, tri.simplices[keep], boundary, _delaunay=tri)


@dataclass(frozen=True)
class FemMatrices:
    """Lumped mass diagonal (length K) and sparse stiffness (K x K)."""

    mass_lumped: np.ndarray
    stiffness: sp.csc_matrix

    @property
    def dim(self) -> int:
        return self.mass_lumped.shape[0]


def assemble_fem(mesh: Mesh) -> FemMatrices:
    """Standard piecewise-linear mass (row-sum lumped) and stiffness."""
    v, t = mesh.vertices, mesh.triangles
    areas = triangle_areas(v, t)
    bad = np.flatnonzero(np.abs(areas) <= 0)
    if bad.size:
        raise MeshError(f"zero-area triangle at index {bad[0]}")
    areas = np.abs(areas)

    K = mesh.n_vertices
    mass = np.zeros(K)
    np.add.at(mass, t.ravel(), np.repeat(areas / 3.0, 3))

    p = v[t]  # (M, 3, 2)
    # gradient coefficients of the three hat functions on each triangle
    b = np.stack([p[:, 1, 1] - p[:, 2, 1],
                  p[:, 2, 1] - p[:, 0, 1],
                  p[:, 0, 1] - p[:, 1, 1]], axis=1) / (2 * areas)[:, None]
    c = np.stack([p[:, 2, 0] - p[:, 1, 0],
                  p[:, 0, 0] - p[:, 2, 0],
                  p[:, 1, 0] - p[:, 0, 0]], axis=1) / (2 * areas)[:, None]
    ke = areas[:, None, None] * (b[:, :, None] * b[:, None, :]
                                 + c[:, :, None] * c[:, None, :])
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    stiff = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(K, K)).tocsc()
    stiff.sum_duplicates()
    return FemMatrices(mass_lumped=mass, stiffness=stiff)


@dataclass(frozen=True)
class Projector:
    """Barycentric interpolation matrix (n x K); zero rows mark points
    outside the triangulation, flagged in `inside`."""

    matrix: sp.csr_matrix
    inside: np.ndarray


def project_points(mesh: Mesh, points) -> Projector:
    pts = _as_xy(points)
    n, K = len(pts), mesh.n_vertices
    rows, cols, vals = [], [], []
    inside = np.zeros(n, dtype=bool)

    tri = mesh._delaunay
    simplex = tri.find_simplex(pts) if tri is not None else np.full(n, -1)

    for i in range(n):
        s = simplex[i]
        if tri is not None and s >= 0:
            verts_idx = tri.simplices[s]
            T = tri.transform[s]
            bc = T[:2].dot(pts[i] - T[2])
            w = np.append(bc, 1.0 - bc.sum())
        else:
            verts_idx, w = _locate_brute(mesh, pts[i])
            if verts_idx is None:
                continue
        w = np.clip(w, 0.0, None)
        w = w / w.sum()
        inside[i] = True
        rows.extend([i] * 3)
        cols.extend(verts_idx.tolist())
        vals.extend(w.tolist())

    mat = sp.csr_matrix((vals, (rows, cols)), shape=(n, K))
    mat.sum_duplicates()
    return Projector(matrix=mat, inside=inside)


def _locate_brute(mesh: Mesh, p: np.ndarray, tol: float = 1e-10):
    """Scan all triangles for one containing p; None when outside."""
    v, t = mesh.vertices, mesh.triangles
    a = v[t[:, 0]]
    d1 = v[t[:, 1]] - a
    d2 = v[t[:, 2]] - a
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    rp = p - a
    w1 = (rp[:, 0] * d2[:, 1] - rp[:, 1] * d2[:, 0]) / det
    w2 = (d1[:, 0] * rp[:, 1] - d1[:, 1] * rp[:, 0]) / det
    ok = (w1 >= -tol) & (w2 >= -tol) & (w1 + w2 <= 1 + tol)
    hits = np.flatnonzero(ok)
    if not hits.size:
        return None, None
    k = hits[0]
    return t[k], np.array([1.0 - w1[k] - w2[k], w1[k], w2[k]])


# ---------------------------------------------------------------------------
# Administrative regions and population offsets
# ---------------------------------------------------------------------------


class RegionLookupError(KeyError):
    """Raised when a population value is missing for a (region, year)."""


@dataclass
class Region:
    name: str
    polygon: np.ndarray
    population: dict  # year -> population

    def __post_init__(self):
        self.polygon = _as_xy(self.polygon)
        for year, pop in self.population.items():
            if pop <= 0:
                raise ValueError(
                    f"region {self.name!r}: population for {year} must be > 0")


@dataclass
class RegionSet:
    regions: list

    def __iter__(self):
        return iter(self.regions)

    def __len__(self):
        return len(self.regions)

    def names(self):
        return [r.name for r in self.regions]


def locate_region(regions: RegionSet, p, year: int):
    """Containing region and its population; None when no region matches.

    Points on shared borders go to the region listed first.  A region
    that matches but has no population entry for `year` is an error.
    """
    for region in regions:
        if point_in_polygon(p, region.polygon):
            if year not in region.population:
                raise RegionLookupError(
                    f"region {region.name!r} has no population for year {year}")
            return region.name, float(region.population[year])
    return None


def load_regions_geojson(path) -> RegionSet:
    """FeatureCollection of polygons carrying a 'name' property."""
    import json

    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("type") != "FeatureCollection":
        raise ValueError("expected a GeoJSON FeatureCollection")
    regions = []
    for feat in doc.get("features", []):
        geom = feat.get("geometry", {})
        if geom.get("type") != "Polygon":
            raise ValueError(f"unsupported geometry type {geom.get('type')!r}")
        ring = np.asarray(geom["coordinates"][0], dtype=float)
        if np.allclose(ring[0], ring[-1]):
            ring = ring[:-1]
        name = feat.get("properties", {}).get("name")
        if not name:
            raise ValueError("region feature missing 'name' property")
        regions.append(Region(name=name, polygon=ring, population={}))
    return RegionSet(regions)


def load_population_csv(path, regions: RegionSet) -> RegionSet:
    """Attach populations from a CSV with columns region,year,population."""
    import csv

    by_name = {r.name: r for r in regions}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"region", "year", "population"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise ValueError(f"population CSV must have columns {sorted(required)}")
        for row in reader:
            name = row["region"]
            if name not in by_name:
                continue
            pop = float(row["population"])
            if pop <= 0:
                raise ValueError(f"non-positive population for {name}, {row['year']}")
            by_name[name].population[int(row["year"])] = pop
    return regions
