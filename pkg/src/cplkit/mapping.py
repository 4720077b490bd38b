"""Linear data mappings between non-matching meshes.

Every mapping is a linear operator ``M`` from values on the input mesh to
values on the output mesh.  Consistent mappings reproduce constants (row sums
of one); conservative mappings preserve the value sum and are built as the
transpose of the consistent mapping in the opposite direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .errors import MappingError
from .mesh import DataField, Mesh, build_index

CONSTRAINTS = ("consistent", "conservative")
POLYNOMIAL_MODES = ("integrated", "separated", "none")
GAUSSIAN_CUTOFF = 1e-9
# relative pivot threshold for dropping affinely dependent polynomial columns
POLY_RANK_TOL = 1e-10


# ----------------------------------------------------------------------
#  Basis functions
# ----------------------------------------------------------------------


def gaussian_shape_from_support(support_radius: float) -> float:
    """Shape parameter that makes the Gaussian hit the cutoff at ``support_radius``."""
    if not support_radius > 0:
        raise MappingError("support radius must be positive")
    return math.sqrt(-math.log(GAUSSIAN_CUTOFF)) / support_radius


@dataclass(frozen=True)
class RbfBasis:
    """Radial basis function: ``gaussian``, ``global_tps`` or ``compact_tps_c2``."""

    variant: str
    support_radius: float | None = None

    def __post_init__(self):
        if self.variant not in ("gaussian", "global_tps", "compact_tps_c2"):
            raise MappingError(f"unknown basis function {self.variant!r}")
        if self.is_local:
            if self.support_radius is None or not self.support_radius > 0:
                raise MappingError(f"{self.variant} needs a positive support radius")

    @property
    def is_local(self) -> bool:
        return self.variant != "global_tps"

    @property
    def shape(self) -> float | None:
        if self.variant == "gaussian":
            return gaussian_shape_from_support(self.support_radius)
        return None

    def __call__(self, dist):
        return basis_eval(self, dist)


def basis_eval(basis: RbfBasis, dist):
    """Evaluate the basis function at distance(s) ``dist``."""
    d = np.asarray(dist, dtype=float)
    if np.any(d < 0):
        raise MappingError("distance must be non-negative")
    if basis.variant == "gaussian":
        out = np.exp(-((basis.shape * d) ** 2))
        out = np.where(d > basis.support_radius, 0.0, out)
    elif basis.variant == "global_tps":
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(d > 0, d * d * np.log(np.where(d > 0, d, 1.0)), 0.0)
    else:
        xi = d / basis.support_radius
        with np.errstate(divide="ignore", invalid="ignore"):
            xlog = np.where(xi > 0, xi**3 * np.log(np.where(xi > 0, xi, 1.0)), 0.0)
        out = 1.0 - 30 * xi**2 - 10 * xi**3 + 45 * xi**4 - 6 * xi**5 - 60 * xlog
        out = np.where(xi >= 1.0, 0.0, out)
    return out if out.ndim else float(out)


# ----------------------------------------------------------------------
#  Operators
# ----------------------------------------------------------------------


class MappingOperator:
    """Linear map from ``input_mesh`` values to ``output_mesh`` values.

    Components of vector data are mapped independently.
    """

    def __init__(self, kind, constraint, input_mesh: Mesh, output_mesh: Mesh):
        if constraint not in CONSTRAINTS:
            raise MappingError(f"unknown constraint {constraint!r}")
        self.kind = kind
        self.constraint = constraint
        self.input_mesh = input_mesh
        self.output_mesh = output_mesh

    @property
    def shape(self):
        return len(self.output_mesh), len(self.input_mesh)

    def _map(self, values: np.ndarray) -> np.ndarray:
        """Map an (n_in, c) array to (n_out, c)."""
        raise NotImplementedError

    def map_values(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        flat = values.ndim == 1
        mat = values.reshape(len(values), -1)
        if len(mat) != len(self.input_mesh):
            raise MappingError(
                f"{len(mat)} values given, input mesh {self.input_mesh.name!r} "
                f"has {len(self.input_mesh)} vertices"
            )
        out = self._map(mat)
        if not np.all(np.isfinite(out)):
            raise MappingError("mapping produced non-finite values")
        return out[:, 0] if flat else out

    def matrix(self) -> np.ndarray:
        """Dense mapping matrix, assembled column by column (small meshes only)."""
        return self.map_values(np.eye(len(self.input_mesh)))

    def __repr__(self):
        return (
            f"<{type(self).__name__} {self.kind} {self.constraint} "
            f"{self.input_mesh.name}->{self.output_mesh.name}>"
        )


class SparseMapping(MappingOperator):
    """Operator stored as an explicit sparse matrix (nearest-neighbor/projection)."""

    def __init__(self, kind, constraint, input_mesh, output_mesh, matrix):
        super().__init__(kind, constraint, input_mesh, output_mesh)
        self.sparse = sp.csr_matrix(matrix)

    def _map(self, values):
        return np.asarray(self.sparse @ values)

    def matrix(self):
        return self.sparse.toarray()


def _check_pair(in_mesh, out_mesh):
    if in_mesh.dim != out_mesh.dim:
        raise MappingError(
            f"dimension mismatch: {in_mesh.name!r} is {in_mesh.dim}D, {out_mesh.name!r} is {out_mesh.dim}D"
        )
    if len(in_mesh) == 0 or len(out_mesh) == 0:
        raise MappingError("empty mesh")


def _nn_matrix(src: Mesh, dst: Mesh):
    """Consistent nearest-neighbor matrix (len(dst) x len(src))."""
    idx = build_index(src).nearest_vertices(dst.vertices)
    n = len(dst)
    return sp.csr_matrix((np.ones(n), (np.arange(n), idx)), shape=(n, len(src)))


def _np_matrix(src: Mesh, dst: Mesh):
    index = build_index(src)
    rows, cols, vals = [], [], []
    for i, p in enumerate(dst.vertices):
        proj = index.project_point(p)
        rows += [i] * len(proj.vertices)
        cols += list(proj.vertices)
        vals += list(proj.weights)
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(dst), len(src)))


def build_nn(in_mesh: Mesh, out_mesh: Mesh, constraint="consistent") -> SparseMapping:
    _check_pair(in_mesh, out_mesh)
    if constraint == "consistent":
        mat = _nn_matrix(in_mesh, out_mesh)
    elif constraint == "conservative":
        mat = _nn_matrix(out_mesh, in_mesh).T
    else:
        raise MappingError(f"unknown constraint {constraint!r}")
    return SparseMapping("nearest-neighbor", constraint, in_mesh, out_mesh, mat)


def build_np(in_mesh: Mesh, out_mesh: Mesh, constraint="consistent") -> SparseMapping:
    """Nearest projection; falls back to nearest neighbor without connectivity."""
    _check_pair(in_mesh, out_mesh)
    if constraint == "consistent":
        mat = _np_matrix(in_mesh, out_mesh)
    elif constraint == "conservative":
        mat = _np_matrix(out_mesh, in_mesh).T
    else:
        raise MappingError(f"unknown constraint {constraint!r}")
    return SparseMapping("nearest-projection", constraint, in_mesh, out_mesh, mat)


def _pairwise(a, b):
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def _poly_matrix(points, columns):
    full = np.hstack([np.ones((len(points), 1)), points])
    return full[:, columns]


class RbfSystem:
    """Interpolant through values on ``centers`` using ``basis`` plus a linear polynomial.

    ``polynomial`` is ``integrated`` (block saddle-point system), ``separated``
    (least-squares polynomial via QR, then RBF on the residual) or ``none``.
    """

    def __init__(self, centers: Mesh, basis: RbfBasis, polynomial="separated"):
        if polynomial not in POLYNOMIAL_MODES:
            raise MappingError(f"unknown polynomial mode {polynomial!r}")
        self.centers = centers
        self.basis = basis
        self.polynomial = polynomial
        pts = centers.vertices
        n, d = pts.shape
        if len(cKDTree(pts).query_pairs(0.0)):
            raise MappingError("rbf system singular: duplicate input vertices")
        if polynomial != "none" and n < d + 1:
            raise MappingError(f"rbf polynomial needs at least {d + 1} input vertices, got {n}")

        self.C = basis_eval(basis, _pairwise(pts, pts))
        self.poly_columns = self._independent_columns(pts) if polynomial != "none" else []
        Q = _poly_matrix(pts, self.poly_columns)
        self.Q = Q

        if polynomial == "integrated":
            p = Q.shape[1]
            A = np.block([[self.C, Q], [Q.T, np.zeros((p, p))]])
            self._lu = self._factor(A)
        else:
            self._lu = self._factor(self.C)
            if polynomial == "separated":
                self._q1, self._r = np.linalg.qr(Q)

    @staticmethod
    def _independent_columns(pts):
        full = np.hstack([np.ones((len(pts), 1)), pts])
        _, R, perm = sla.qr(full, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        keep = perm[diag > POLY_RANK_TOL * diag[0]]
        return sorted(int(c) for c in keep)

    @staticmethod
    def _factor(A):
        anorm = np.linalg.norm(A, 1)
        lu, piv = sla.lu_factor(A, check_finite=True)
        rcond, info = sla.lapack.dgecon(lu, anorm, norm="1")
        if info != 0 or not rcond > np.finfo(float).eps or not np.all(np.isfinite(lu)):
            raise MappingError("rbf system singular")
        return lu, piv

    def _eval_matrices(self, points):
        Ct = basis_eval(self.basis, _pairwise(points, self.centers.vertices))
        Qt = _poly_matrix(points, self.poly_columns) if self.poly_columns else None
        return Ct, Qt

    def coefficients(self, values):
        """Return (lambda, beta) for an (n, c) value array."""
        v = np.asarray(values, dtype=float).reshape(len(self.centers), -1)
        if self.polynomial == "integrated":
            rhs = np.vstack([v, np.zeros((self.Q.shape[1], v.shape[1]))])
            sol = sla.lu_solve(self._lu, rhs)
            return sol[: len(v)], sol[len(v):]
        if self.polynomial == "separated":
            beta = sla.solve_triangular(self._r, self._q1.T @ v)
            lam = sla.lu_solve(self._lu, v - self.Q @ beta)
            return lam, beta
        return sla.lu_solve(self._lu, v), np.zeros((0, v.shape[1]))

    def evaluate(self, points, values):
        lam, beta = self.coefficients(values)
        Ct, Qt = self._eval_matrices(np.asarray(points, dtype=float))
        out = Ct @ lam
        if Qt is not None:
            out = out + Qt @ beta
        return out


class RbfMapping(MappingOperator):
    """RBF mapping; conservative variants apply the exact transpose."""

    def __init__(self, constraint, input_mesh, output_mesh, basis, polynomial):
        super().__init__("rbf-" + basis.variant, constraint, input_mesh, output_mesh)
        self.basis = basis
        self.polynomial = polynomial
        # consistent direction: centers -> targets
        if constraint == "consistent":
            centers, targets = input_mesh, output_mesh
        else:
            centers, targets = output_mesh, input_mesh
        self.system = RbfSystem(centers, basis, polynomial)
        self._Ct, self._Qt = self.system._eval_matrices(targets.vertices)

    def _consistent(self, v):
        lam, beta = self.system.coefficients(v)
        out = self._Ct @ lam
        if self._Qt is not None:
            out = out + self._Qt @ beta
        return out

    def _transpose(self, w):
        s = self.system
        a = self._Ct.T @ w
        b = self._Qt.T @ w if self._Qt is not None else None
        if s.polynomial == "integrated":
            rhs = np.vstack([a, b]) if b is not None else a
            return sla.lu_solve(s._lu, rhs, trans=1)[: len(a)]
        z = sla.lu_solve(s._lu, a, trans=1)
        if s.polynomial == "separated":
            z = z - s._q1 @ (s._q1.T @ z)
            z = z + s._q1 @ sla.solve_triangular(s._r, b, trans="T")
        return z

    def _map(self, values):
        if self.constraint == "consistent":
            return self._consistent(values)
        return self._transpose(values)


def build_rbf(
    in_mesh: Mesh,
    out_mesh: Mesh,
    constraint="consistent",
    basis: RbfBasis | None = None,
    polynomial="separated",
) -> RbfMapping:
    _check_pair(in_mesh, out_mesh)
    if constraint not in CONSTRAINTS:
        raise MappingError(f"unknown constraint {constraint!r}")
    if basis is None:
        basis = RbfBasis("global_tps")
    return RbfMapping(constraint, in_mesh, out_mesh, basis, polynomial)


def apply(op: MappingOperator, field: DataField) -> DataField:
    """Map ``field`` from the operator's input mesh to its output mesh."""
    if field.mesh != op.input_mesh.name:
        raise MappingError(
            f"field {field.name!r} lives on {field.mesh!r}, operator expects {op.input_mesh.name!r}"
        )
    if field.vertex_count != len(op.input_mesh):
        raise MappingError(
            f"field {field.name!r} has {field.vertex_count} vertices, "
            f"mesh {op.input_mesh.name!r} has {len(op.input_mesh)}"
        )
    out = op.map_values(field.as_matrix())
    return DataField(field.name, op.output_mesh.name, field.components, out.reshape(-1))


MAPPING_KINDS = {
    "nearest-neighbor": "nn",
    "nearest-projection": "np",
    "rbf-gaussian": "gaussian",
    "rbf-thin-plate-splines": "global_tps",
    "rbf-compact-tps-c2": "compact_tps_c2",
}


def build_mapping(kind, in_mesh, out_mesh, constraint="consistent", support_radius=None,
                  polynomial="separated") -> MappingOperator:
    """Build a mapping from its configuration name (``nearest-neighbor``, ``rbf-gaussian``, ...)."""
    if kind in ("nearest-neighbor", "nn"):
        return build_nn(in_mesh, out_mesh, constraint)
    if kind in ("nearest-projection", "np"):
        return build_np(in_mesh, out_mesh, constraint)
    variant = MAPPING_KINDS.get(kind, kind)
    if variant not in ("gaussian", "global_tps", "compact_tps_c2"):
        raise MappingError(f"unknown mapping kind {kind!r}")
    basis = RbfBasis(variant, support_radius if variant != "global_tps" else None)
    return build_rbf(in_mesh, out_mesh, constraint, basis, polynomial)


# ----------------------------------------------------------------------
#  Accuracy measurement
# ----------------------------------------------------------------------


def wave_function(points) -> np.ndarray:
    """Smooth test field ``0.78 * cos(10 * (x + y + z))``."""
    pts = np.asarray(points, dtype=float)
    return 0.78 * np.cos(10.0 * pts.sum(axis=1))


def mapping_error(in_mesh: Mesh, out_mesh: Mesh, op: MappingOperator, f=wave_function) -> float:
    """Sample ``f`` on the input mesh, map, and return ``sqrt(sum e_i^2) / n`` on the output."""
    v_in = f(in_mesh.vertices)
    v_out = op.map_values(v_in)
    e = np.abs(v_out - f(out_mesh.vertices))
    return float(np.sqrt(np.sum(e**2)) / len(e))
