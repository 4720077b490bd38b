import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cplkit.errors import MeshError
from cplkit.mesh import DataField, Mesh, SpatialIndex, export_vtk, read_mesh, write_mesh


def scan_nearest(pts, p):
    d = np.linalg.norm(pts - p, axis=1)
    return int(np.flatnonzero(d == d.min())[0])


def seg_closest(p, a, b):
    ab = b - a
    t = ((p - a) @ ab) / (ab @ ab)
    return t, a + t * ab


def scan_projection(mesh, index, p):
    """Brute-force closest valid entity distance over all vertices, edges and triangles."""
    best = np.min(np.linalg.norm(mesh.vertices - p, axis=1))
    for i, j in index.edges:
        t, q = seg_closest(p, mesh.vertices[i], mesh.vertices[j])
        if -1e-12 <= t <= 1 + 1e-12:
            best = min(best, np.linalg.norm(p - q))
    for tri in mesh.triangles:
        a, b, c = mesh.vertices[tri]
        A = np.column_stack([b - a, c - a])
        w, *_ = np.linalg.lstsq(A, p - a, rcond=None)
        bary = np.array([1 - w.sum(), w[0], w[1]])
        if bary.min() >= -1e-12:
            best = min(best, np.linalg.norm(p - (a + A @ w)))
    return best


class TestMesh:
    def test_validation(self):
        with pytest.raises(MeshError):
            Mesh("m", np.zeros((3, 4)))
        with pytest.raises(MeshError):
            Mesh("m", [[0.0, np.nan]])
        with pytest.raises(MeshError, match="out of range"):
            Mesh("m", np.zeros((2, 2)), edges=[[0, 2]])
        with pytest.raises(MeshError, match="degenerate"):
            Mesh("m", np.zeros((2, 2)), edges=[[1, 1]])
        with pytest.raises(MeshError, match="repeated"):
            Mesh("m", np.eye(3), triangles=[[0, 1, 1]])

    def test_arrays_are_read_only(self):
        m = Mesh("m", [[0.0, 0.0], [1.0, 0.0]])
        with pytest.raises(ValueError):
            m.vertices[0, 0] = 3.0

    def test_datafield_shape(self):
        m = Mesh("m", np.zeros((3, 3)))
        f = DataField("F", m.name, 3, np.arange(9.0))
        assert f.vertex_count == 3
        assert f.as_matrix().shape == (3, 3)
        with pytest.raises(MeshError):
            DataField("F", "m", 2, np.arange(3.0))

    def test_text_round_trip(self, tmp_path):
        m = Mesh("tri", [[0, 0, 0], [1, 0, 0], [0, 1, 0.5]], edges=[[0, 1]], triangles=[[0, 1, 2]])
        write_mesh(m, tmp_path / "tri.txt")
        assert read_mesh(tmp_path / "tri.txt", "tri") == m

    def test_text_errors(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("v 0 0\nq 1 2\n")
        with pytest.raises(MeshError, match="bad.txt:2"):
            read_mesh(p)


class TestNearestVertex:
    def test_empty_mesh(self):
        with pytest.raises(MeshError, match="empty mesh"):
            SpatialIndex(Mesh("m", np.zeros((0, 2))))

    def test_single_vertex(self):
        idx = SpatialIndex(Mesh("m", [[3.0, 4.0]]))
        assert idx.nearest_vertex([100.0, -5.0]) == 0

    def test_line(self):
        idx = SpatialIndex(Mesh("m", [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]))
        assert idx.nearest_vertex([0.6, 0.0]) == 1

    def test_tie_goes_to_lowest_index(self):
        idx = SpatialIndex(Mesh("m", [[0.0, 0.0], [1.0, 0.0]]))
        assert idx.nearest_vertex([0.5, 0.0]) == 0
        assert idx.nearest_vertex([0.9, 0.0]) == 1
        idx = SpatialIndex(Mesh("m", [[1.0, 0.0], [0.0, 0.0]]))
        assert idx.nearest_vertex([0.5, 0.0]) == 0

    def test_large_cloud_matches_scan(self, rng):
        pts = rng.random((10_000, 3))
        idx = SpatialIndex(Mesh("m", pts))
        for q in rng.random((100, 3)):
            assert idx.nearest_vertex(q) == scan_nearest(pts, q)

    @settings(max_examples=60, deadline=None)
    @given(
        arrays(np.float64, st.tuples(st.integers(1, 40), st.just(2)), elements=st.integers(-5, 5).map(float)),
        arrays(np.float64, (20, 2), elements=st.floats(-6, 6)),
    )
    def test_property_matches_scan_with_ties(self, pts, queries):
        # integer grids make exact distance ties common
        idx = SpatialIndex(Mesh("m", pts))
        for q in queries:
            assert idx.nearest_vertex(q) == scan_nearest(pts, q)


class TestProjection:
    def test_triangle_hit(self):
        m = Mesh("t", [[0, 0, 0], [1, 0, 0], [0, 1, 0]], triangles=[[0, 1, 2]])
        pr = SpatialIndex(m).project_point([0.25, 0.25, 1.0])
        assert pr.kind == "triangle"
        np.testing.assert_allclose(pr.weights, (0.5, 0.25, 0.25), atol=1e-15)
        assert pr.distance == pytest.approx(1.0)

    def test_no_connectivity_falls_back_to_vertex(self, rng):
        m = Mesh("m", rng.random((20, 3)))
        idx = SpatialIndex(m)
        for q in rng.random((10, 3)):
            pr = idx.project_point(q)
            assert pr.kind == "vertex" and pr.entity == scan_nearest(m.vertices, q)

    def test_outside_shadow_uses_edge(self):
        m = Mesh("t", [[0, 0], [1, 0], [0, 1]], triangles=[[0, 1, 2]])
        pr = SpatialIndex(m).project_point([0.5, -1.0])
        assert pr.kind == "edge"
        assert pr.distance == pytest.approx(1.0)
        assert set(pr.vertices) == {0, 1}

    def test_triangle_sides_become_edges(self):
        m = Mesh("t", [[0, 0], [1, 0], [0, 1]], edges=[[1, 0]], triangles=[[0, 1, 2]])
        idx = SpatialIndex(m)
        assert len(idx.edges) == 3
        assert tuple(idx.edges[0]) == (1, 0)

    def test_random_surface_matches_scan(self, rng):
        verts = rng.random((30, 3))
        tris = np.array([rng.choice(30, 3, replace=False) for _ in range(25)])
        m = Mesh("s", verts, triangles=tris)
        idx = SpatialIndex(m)
        for q in rng.random((100, 3)) * 1.4 - 0.2:
            pr = idx.project_point(q)
            assert pr.distance == pytest.approx(scan_projection(m, idx, q), rel=1e-9, abs=1e-14)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_weights_are_convex(self, seed):
        rng = np.random.default_rng(seed)
        verts = rng.random((12, 3))
        tris = np.array([rng.choice(12, 3, replace=False) for _ in range(6)])
        edges = np.array([rng.choice(12, 2, replace=False) for _ in range(4)])
        idx = SpatialIndex(Mesh("s", verts, edges, tris))
        for q in rng.random((10, 3)):
            pr = idx.project_point(q)
            w = np.array(pr.weights)
            assert w.min() >= 0.0
            assert abs(w.sum() - 1.0) <= 1e-12

    def test_on_triangle_interpolation_is_barycentric(self, rng):
        a, b, c = rng.random((3, 3))
        m = Mesh("t", [a, b, c], triangles=[[0, 1, 2]])
        vals = np.array([0.3, -1.2, 2.5])
        lam = rng.dirichlet([1, 1, 1])
        p = lam[0] * a + lam[1] * b + lam[2] * c
        pr = SpatialIndex(m).project_point(p)
        assert pr.kind == "triangle"
        got = sum(w * vals[v] for v, w in zip(pr.vertices, pr.weights))
        assert got == pytest.approx(lam @ vals, abs=1e-12)


class TestVtk:
    def test_geometry_only(self, tmp_path):
        m = Mesh("m", [[0, 0], [1, 0]], edges=[[0, 1]])
        export_vtk(m, [], tmp_path / "m.vtk")
        text = (tmp_path / "m.vtk").read_text()
        assert text.startswith("# vtk DataFile Version 3.0")
        assert "POINT_DATA" not in text
        assert "0 0 0\n1 0 0" in text

    def test_golden_bytes(self, tmp_path):
        m = Mesh("tri", [[0, 0, 0], [1, 0, 0], [0, 1, 0]], triangles=[[0, 1, 2]])
        f = DataField("T", "tri", 1, [1.0, 2.5, -3.0])
        export_vtk(m, [f], tmp_path / "a.vtk")
        export_vtk(m, [f], tmp_path / "b.vtk")
        golden = (
            "# vtk DataFile Version 3.0\nmesh tri\nASCII\nDATASET POLYDATA\n"
            "POINTS 3 double\n0 0 0\n1 0 0\n0 1 0\n"
            "POLYGONS 1 4\n3 0 1 2\n"
            "POINT_DATA 3\nSCALARS T double 1\nLOOKUP_TABLE default\n1\n2.5\n-3\n"
        )
        assert (tmp_path / "a.vtk").read_text() == golden
        assert (tmp_path / "a.vtk").read_bytes() == (tmp_path / "b.vtk").read_bytes()

    def test_external_reader(self, tmp_path):
        vtk = pytest.importorskip("vtk")
        from vtk.util.numpy_support import vtk_to_numpy

        m = Mesh("tri", [[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], edges=[[0, 3]], triangles=[[0, 1, 2], [1, 3, 2]])
        f = DataField("V", "tri", 3, np.arange(12.0))
        export_vtk(m, [f], tmp_path / "m.vtk")
        reader = vtk.vtkPolyDataReader()
        reader.SetFileName(str(tmp_path / "m.vtk"))
        reader.Update()
        poly = reader.GetOutput()
        assert poly.GetNumberOfPoints() == 4
        assert poly.GetNumberOfPolys() == 2
        assert poly.GetNumberOfLines() == 1
        np.testing.assert_allclose(vtk_to_numpy(poly.GetPointData().GetArray("V")), np.arange(12.0).reshape(4, 3))

    def test_mismatched_field(self, tmp_path):
        m = Mesh("m", [[0, 0], [1, 0]])
        with pytest.raises(MeshError):
            export_vtk(m, [DataField("T", "m", 1, [1.0])], tmp_path / "x.vtk")
