"""Coupling meshes, per-vertex data and nearest-entity queries.

A mesh is an unstructured vertex cloud in 2D or 3D with optional edge and
triangle connectivity.  :class:`SpatialIndex` answers nearest-vertex and
closest-projection queries; the kd-trees only prune candidates, every answer
is decided by exact distance comparison so results match a linear scan.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import MeshError

# relative tolerance for "projection lies inside the entity" and distance ties
REL_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Mesh:
    """Named vertex cloud with optional edges and triangles."""

    name: str
    vertices: np.ndarray
    edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    triangles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))

    def __post_init__(self):
        verts = np.array(self.vertices, dtype=float, copy=True)
        if verts.ndim == 1 and verts.size == 0:
            verts = verts.reshape(0, 2)
        if verts.ndim != 2 or verts.shape[1] not in (2, 3):
            raise MeshError(f"mesh {self.name!r}: vertices must have shape (n, 2) or (n, 3)")
        if not np.all(np.isfinite(verts)):
            raise MeshError(f"mesh {self.name!r}: non-finite vertex coordinate")
        edges = np.array(self.edges, dtype=np.int64, copy=True).reshape(-1, 2)
        tris = np.array(self.triangles, dtype=np.int64, copy=True).reshape(-1, 3)
        n = len(verts)
        for kind, conn in (("edge", edges), ("triangle", tris)):
            if conn.size and (conn.min() < 0 or conn.max() >= n):
                raise MeshError(f"mesh {self.name!r}: {kind} references a vertex out of range")
        if len(edges) and np.any(edges[:, 0] == edges[:, 1]):
            raise MeshError(f"mesh {self.name!r}: degenerate edge")
        if len(tris) and np.any(
            (tris[:, 0] == tris[:, 1]) | (tris[:, 1] == tris[:, 2]) | (tris[:, 0] == tris[:, 2])
        ):
            raise MeshError(f"mesh {self.name!r}: triangle with repeated vertex")
        for arr in (verts, edges, tris):
            arr.setflags(write=False)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "triangles", tris)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    def __len__(self):
        return len(self.vertices)

    @property
    def has_connectivity(self) -> bool:
        return len(self.edges) > 0 or len(self.triangles) > 0

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented
        return (
            self.name == other.name
            and self.vertices.shape == other.vertices.shape
            and np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.triangles, other.triangles)
        )

    __hash__ = object.__hash__

    def __repr__(self):
        return (
            f"Mesh({self.name!r}, dim={self.dim}, vertices={len(self.vertices)}, "
            f"edges={len(self.edges)}, triangles={len(self.triangles)})"
        )


@dataclass(frozen=True, eq=False)
class DataField:
    """Per-vertex values of one data item, stored vertex-major."""

    name: str
    mesh: str
    components: int
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float, copy=True).reshape(-1)
        if self.components < 1:
            raise MeshError(f"field {self.name!r}: components must be >= 1")
        if vals.size % self.components:
            raise MeshError(
                f"field {self.name!r}: {vals.size} values do not divide into "
                f"{self.components} components"
            )
        object.__setattr__(self, "values", vals)

    @property
    def vertex_count(self) -> int:
        return self.values.size // self.components

    def as_matrix(self) -> np.ndarray:
        """Values as an (n, components) view."""
        return self.values.reshape(-1, self.components)

    @classmethod
    def from_matrix(cls, name, mesh, values):
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            return cls(name, mesh, 1, values)
        return cls(name, mesh, values.shape[1], values.reshape(-1))


@dataclass(frozen=True)
class Projection:
    """Result of :meth:`SpatialIndex.project_point`.

    ``vertices`` are mesh vertex ids, ``weights`` the matching interpolation
    weights (barycentric, linear or ``[1.0]``).
    """

    kind: str
    entity: int
    vertices: tuple
    weights: tuple
    distance: float


def read_mesh(path, name=None) -> Mesh:
    """Parse the plain-text mesh format.

    One record per line: ``v x y [z]``, ``e i j`` or ``t i j k`` with
    zero-based vertex ids; ``#`` starts a comment.
    """
    path = Path(path)
    verts, edges, tris = [], [], []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tag, *rest = line.split()
        try:
            if tag == "v":
                if len(rest) not in (2, 3):
                    raise ValueError("vertex needs 2 or 3 coordinates")
                verts.append([float(c) for c in rest])
            elif tag == "e":
                if len(rest) != 2:
                    raise ValueError("edge needs 2 vertex ids")
                edges.append([int(c) for c in rest])
            elif tag == "t":
                if len(rest) != 3:
                    raise ValueError("triangle needs 3 vertex ids")
                tris.append([int(c) for c in rest])
            else:
                raise ValueError(f"unknown record {tag!r}")
        except ValueError as exc:
            raise MeshError(f"{path}:{lineno}: {exc}") from None
    if verts and len({len(v) for v in verts}) != 1:
        raise MeshError(f"{path}: vertices mix 2D and 3D coordinates")
    return Mesh(
        name or path.stem,
        np.array(verts, dtype=float).reshape(len(verts), len(verts[0]) if verts else 2),
        np.array(edges, dtype=np.int64).reshape(-1, 2),
        np.array(tris, dtype=np.int64).reshape(-1, 3),
    )


def write_mesh(mesh: Mesh, path) -> None:
    lines = [f"# mesh {mesh.name}"]
    lines += ["v " + " ".join(f"{c:.17g}" for c in v) for v in mesh.vertices]
    lines += [f"e {i} {j}" for i, j in mesh.edges]
    lines += [f"t {i} {j} {k}" for i, j, k in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def _segment_projections(p, a, b):
    """Project p on each segment (a[k], b[k]); returns clamped t, closest points, inside flags."""
    ab = b - a
    t = np.einsum("ij,ij->i", p - a, ab) / np.einsum("ij,ij->i", ab, ab)
    inside = (t >= -REL_TOL) & (t <= 1.0 + REL_TOL)
    t = np.clip(t, 0.0, 1.0)
    return t, a + t[:, None] * ab, inside


def _triangle_projections(p, a, b, c):
    """Orthogonal projection of p onto the plane of each triangle (a[k], b[k], c[k]).

    Returns clipped barycentric weights, the corresponding points and whether
    the projection falls inside (boundary included, relative tolerance).
    Degenerate triangles are never inside.
    """
    e0, e1, v = b - a, c - a, p - a
    d00 = np.einsum("ij,ij->i", e0, e0)
    d01 = np.einsum("ij,ij->i", e0, e1)
    d11 = np.einsum("ij,ij->i", e1, e1)
    d20 = np.einsum("ij,ij->i", v, e0)
    d21 = np.einsum("ij,ij->i", v, e1)
    det = d00 * d11 - d01 * d01
    ok = det > REL_TOL * d00 * d11
    safe = np.where(ok, det, 1.0)
    wb = (d11 * d20 - d01 * d21) / safe
    wc = (d00 * d21 - d01 * d20) / safe
    w = np.column_stack([1.0 - wb - wc, wb, wc])
    inside = ok & (w.min(axis=1) >= -REL_TOL)
    w = np.clip(w, 0.0, None)
    total = w.sum(axis=1)
    w /= np.where(total > 0, total, 1.0)[:, None]
    q = w[:, :1] * a + w[:, 1:2] * b + w[:, 2:] * c
    return w, q, inside


class SpatialIndex:
    """Nearest-entity search over one mesh.

    Edges are the mesh's explicit edges followed by triangle sides that are not
    already listed; ``edge`` entity ids in :class:`Projection` index into
    :attr:`edges`.
    """

    def __init__(self, mesh: Mesh):
        if len(mesh) == 0:
            raise MeshError("empty mesh")
        self.mesh = mesh
        self._pts = mesh.vertices
        self._vtree = cKDTree(self._pts)
        self.edges = self._collect_edges(mesh)
        self.triangles = mesh.triangles
        self._etree, self._erad = self._entity_tree(self.edges)
        self._ttree, self._trad = self._entity_tree(self.triangles)

    @staticmethod
    def _collect_edges(mesh):
        seen = set()
        out = []
        for i, j in mesh.edges.tolist():
            key = (min(i, j), max(i, j))
            if key not in seen:
                seen.add(key)
                out.append((i, j))
        for tri in mesh.triangles.tolist():
            for i, j in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                key = (min(i, j), max(i, j))
                if key not in seen:
                    seen.add(key)
                    out.append((i, j))
        return np.array(out, dtype=np.int64).reshape(-1, 2)

    def _entity_tree(self, conn):
        if len(conn) == 0:
            return None, 0.0
        corners = self._pts[conn]
        centers = corners.mean(axis=1)
        radius = np.linalg.norm(corners - centers[:, None, :], axis=2).max()
        return cKDTree(centers), float(radius)

    def nearest_vertex(self, point) -> int:
        """Index of the closest vertex; exact ties go to the lowest index."""
        return self._nearest_vertex(np.asarray(point, dtype=float))[0]

    def _nearest_vertex(self, p):
        d, _ = self._vtree.query(p)
        cand = self._vtree.query_ball_point(p, d * (1 + 1e-9) + 1e-300)
        cand = np.sort(np.asarray(cand, dtype=np.int64))
        dist = np.linalg.norm(self._pts[cand] - p, axis=1)
        k = int(np.argmin(dist))
        return int(cand[k]), float(dist[k])

    def nearest_vertices(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return np.array([self._nearest_vertex(p)[0] for p in points], dtype=np.int64)

    def project_point(self, point) -> Projection:
        """Closest projection of ``point`` onto triangles, edges or vertices.

        A triangle (edge) qualifies only if the orthogonal projection lands on
        it.  Among qualifying entities the smallest distance wins; distances
        equal within the relative tolerance prefer triangle, then edge, then
        vertex, then the lowest entity id.
        """
        p = np.asarray(point, dtype=float)
        vid, best = self._nearest_vertex(p)
        result = Projection("vertex", vid, (vid,), (1.0,), best)
        bound = best * (1 + 1e-9) + 1e-300

        if self._etree is not None:
            eids = np.sort(np.asarray(self._etree.query_ball_point(p, bound + self._erad), dtype=np.int64))
            if len(eids):
                ij = self.edges[eids]
                t, q, inside = _segment_projections(p, self._pts[ij[:, 0]], self._pts[ij[:, 1]])
                dist = np.linalg.norm(q - p, axis=1)
                # only entities that can beat the nearest vertex are compared exactly
                for k in np.flatnonzero(inside & (dist <= bound)):
                    if self._better(float(dist[k]), "edge", result):
                        i, j = ij[k]
                        result = Projection("edge", int(eids[k]), (int(i), int(j)),
                                            (1.0 - float(t[k]), float(t[k])), float(dist[k]))

        if self._ttree is not None:
            tids = np.sort(np.asarray(self._ttree.query_ball_point(p, bound + self._trad), dtype=np.int64))
            if len(tids):
                tri = self.triangles[tids]
                w, q, inside = _triangle_projections(p, *(self._pts[tri[:, c]] for c in range(3)))
                dist = np.linalg.norm(q - p, axis=1)
                for k in np.flatnonzero(inside & (dist <= bound)):
                    if self._better(float(dist[k]), "triangle", result):
                        result = Projection("triangle", int(tids[k]), tuple(int(v) for v in tri[k]),
                                            tuple(float(x) for x in w[k]), float(dist[k]))
        return result

    _RANK = {"triangle": 0, "edge": 1, "vertex": 2}

    def _better(self, dist, kind, current):
        tol = REL_TOL * max(dist, current.distance, 1e-300)
        if dist < current.distance - tol:
            return True
        if dist > current.distance + tol:
            return False
        return self._RANK[kind] < self._RANK[current.kind]


def build_index(mesh: Mesh) -> SpatialIndex:
    return SpatialIndex(mesh)


def _fmt(x):
    return f"{x:.17g}"


def export_vtk(mesh: Mesh, fields, path) -> None:
    """Write a legacy ASCII VTK POLYDATA file with point data."""
    fields = list(fields)
    n = len(mesh)
    for f in fields:
        if f.mesh != mesh.name:
            raise MeshError(f"field {f.name!r} lives on mesh {f.mesh!r}, not {mesh.name!r}")
        if f.vertex_count != n:
            raise MeshError(f"field {f.name!r} has {f.vertex_count} vertices, mesh has {n}")
    pts = mesh.vertices
    if mesh.dim == 2:
        pts = np.hstack([pts, np.zeros((n, 1))])
    out = [
        "# vtk DataFile Version 3.0",
        f"mesh {mesh.name}",
        "ASCII",
        "DATASET POLYDATA",
        f"POINTS {n} double",
    ]
    out += [" ".join(_fmt(c) for c in row) for row in pts]
    if len(mesh.edges):
        out.append(f"LINES {len(mesh.edges)} {3 * len(mesh.edges)}")
        out += [f"2 {i} {j}" for i, j in mesh.edges]
    if len(mesh.triangles):
        out.append(f"POLYGONS {len(mesh.triangles)} {4 * len(mesh.triangles)}")
        out += [f"3 {i} {j} {k}" for i, j, k in mesh.triangles]
    if fields:
        out.append(f"POINT_DATA {n}")
        for f in fields:
            vals = f.as_matrix()
            if f.components == 1:
                out += [f"SCALARS {f.name} double 1", "LOOKUP_TABLE default"]
                out += [_fmt(v) for v in vals[:, 0]]
            else:
                if f.components == 2:
                    vals = np.hstack([vals, np.zeros((n, 1))])
                elif f.components != 3:
                    raise MeshError(f"field {f.name!r}: VTK vectors need 2 or 3 components")
                out.append(f"VECTORS {f.name} double")
                out += [" ".join(_fmt(c) for c in row) for row in vals]
    Path(path).write_text("\n".join(out) + "\n")
