import numpy as np
import pytest
import scipy.sparse as sp

from hurdlemap.geometry import (
    FemMatrices,
    Mesh,
    MeshError,
    Point,
    Region,
    RegionLookupError,
    RegionSet,
    assemble_fem,
    build_mesh,
    locate_region,
    point_in_polygon,
    project_points,
    triangle_areas,
)

UNIT_SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def unit_triangle_mesh():
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    return Mesh(verts, np.array([[0, 1, 2]]), verts)


class TestBuildMesh:
    def test_minimal_square(self):
        mesh = build_mesh(UNIT_SQUARE, UNIT_SQUARE, max_edge=2.0)
        assert mesh.n_vertices >= 4
        assert mesh.n_triangles >= 2
        # corners are covered
        proj = project_points(mesh, UNIT_SQUARE)
        assert proj.inside.all()

    def test_interior_edges_respect_max_edge(self):
        rng = np.random.default_rng(7)
        pts = rng.random((100, 2))
        mesh = build_mesh(pts, UNIT_SQUARE, max_edge=0.2)
        edges = mesh.edges()
        seg = mesh.vertices[edges]
        mids = 0.5 * (seg[:, 0] + seg[:, 1])
        inside = np.array([point_in_polygon(m, UNIT_SQUARE) for m in mids])
        lengths = np.linalg.norm(seg[:, 0] - seg[:, 1], axis=1)
        assert lengths[inside].max() <= 0.2 + 1e-12

    def test_collinear_points_error(self):
        pts = np.array([[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]])
        with pytest.raises(MeshError):
            build_mesh(pts, boundary=None, max_edge=0.5)

    def test_extension_band_present(self):
        mesh = build_mesh(UNIT_SQUARE, UNIT_SQUARE, max_edge=0.5)
        diam = np.sqrt(2.0)
        lo = mesh.vertices.min(axis=0)
        hi = mesh.vertices.max(axis=0)
        assert (lo <= -0.2 * diam + 1e-9).all()
        assert (hi >= 1 + 0.2 * diam - 1e-9).all()

    def test_all_data_points_inside(self):
        rng = np.random.default_rng(3)
        pts = rng.random((40, 2))
        mesh = build_mesh(pts, UNIT_SQUARE, max_edge=0.3)
        proj = project_points(mesh, pts)
        assert proj.inside.all()


class TestAssembleFem:
    def test_single_right_triangle_mass(self):
        fem = assemble_fem(unit_triangle_mesh())
        assert fem.mass_lumped.sum() == pytest.approx(0.5, abs=1e-14)

    def test_stiffness_annihilates_constants(self):
        mesh = build_mesh(UNIT_SQUARE, UNIT_SQUARE, max_edge=0.3)
        fem = assemble_fem(mesh)
        ones = np.ones(fem.dim)
        assert np.abs(fem.stiffness @ ones).max() < 1e-10

    def test_stiffness_symmetric(self):
        mesh = build_mesh(UNIT_SQUARE, UNIT_SQUARE, max_edge=0.4)
        fem = assemble_fem(mesh)
        assert abs(fem.stiffness - fem.stiffness.T).max() < 1e-12

    def test_refinement_conserves_total_mass(self):
        mesh1 = build_mesh(UNIT_SQUARE, UNIT_SQUARE, max_edge=0.4)
        mesh2 = build_mesh(UNIT_SQUARE, UNIT_SQUARE, max_edge=0.2)
        a1 = assemble_fem(mesh1).mass_lumped.sum()
        a2 = assemble_fem(mesh2).mass_lumped.sum()
        assert a1 == pytest.approx(a2, rel=1e-8)

    def test_degenerate_triangle_reports_index(self):
        verts = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
        with pytest.raises(MeshError, match="0"):
            Mesh(verts, np.array([[0, 1, 2]]), verts)


class TestProjectPoints:
    def test_vertex_is_indicator(self):
        mesh = unit_triangle_mesh()
        proj = project_points(mesh, np.array([[1.0, 0.0]]))
        row = proj.matrix.toarray()[0]
        assert row[1] == pytest.approx(1.0, abs=1e-12)
        assert row.sum() == pytest.approx(1.0, abs=1e-12)

    def test_centroid_equal_weights(self):
        mesh = unit_triangle_mesh()
        proj = project_points(mesh, np.array([[1 / 3, 1 / 3]]))
        row = proj.matrix.toarray()[0]
        np.testing.assert_allclose(np.sort(row), [1 / 3] * 3, atol=1e-12)

    def test_outside_point_zero_row(self):
        mesh = unit_triangle_mesh()
        proj = project_points(mesh, np.array([[2.0, 2.0]]))
        assert not proj.inside[0]
        assert proj.matrix[0].nnz == 0

    def test_rows_sum_to_one_inside(self):
        rng = np.random.default_rng(11)
        pts = rng.random((50, 2))
        mesh = build_mesh(pts, UNIT_SQUARE, max_edge=0.3)
        proj = project_points(mesh, pts)
        sums = np.asarray(proj.matrix.sum(axis=1)).ravel()
        np.testing.assert_allclose(sums, 1.0, atol=1e-12)

    def test_linear_reproduction(self):
        rng = np.random.default_rng(5)
        pts = rng.random((30, 2)) * 0.8 + 0.1
        mesh = build_mesh(pts, UNIT_SQUARE, max_edge=0.25)
        proj = project_points(mesh, pts)
        f = lambda xy: 2.0 * xy[:, 0] - 3.0 * xy[:, 1] + 0.7
        nodal = f(mesh.vertices)
        np.testing.assert_allclose(proj.matrix @ nodal, f(pts), atol=1e-10)

    def test_at_most_three_nonzeros(self):
        rng = np.random.default_rng(13)
        pts = rng.random((40, 2))
        mesh = build_mesh(pts, UNIT_SQUARE, max_edge=0.3)
        proj = project_points(mesh, pts)
        counts = np.diff(proj.matrix.indptr)
        assert (counts <= 3).all()


class TestRegions:
    def make_regions(self):
        sq = Region("sq", UNIT_SQUARE, {2020: 1000.0})
        east = Region("east", UNIT_SQUARE + [1.0, 0.0], {2020: 500.0})
        return RegionSet([sq, east])

    def test_interior_point(self):
        regions = self.make_regions()
        assert locate_region(regions, Point(0.5, 0.5), 2020) == ("sq", 1000.0)

    def test_not_found(self):
        regions = self.make_regions()
        assert locate_region(regions, Point(5.0, 5.0), 2020) is None

    def test_shared_border_first_region_wins(self):
        regions = self.make_regions()
        name, _ = locate_region(regions, Point(1.0, 0.5), 2020)
        assert name == "sq"

    def test_missing_year(self):
        regions = self.make_regions()
        with pytest.raises(RegionLookupError):
            locate_region(regions, Point(0.5, 0.5), 1999)

    def test_nonpositive_population_rejected(self):
        with pytest.raises(ValueError):
            Region("bad", UNIT_SQUARE, {2020: 0.0})
