"""Tensor meshes and mimetic finite-volume operators.

Cell-centered quantities are flattened in Fortran order (first axis fastest),
so axis-wise operators are Kronecker products of 1D stencils with identities.
The discrete gradient acts cell-to-interior-face; boundary faces are omitted,
which realizes a homogeneous Neumann (zero flux) condition and keeps every
assembled diffusion operator symmetric.
"""

from dataclasses import dataclass
from functools import reduce

import numpy as np
import scipy.sparse as sp

from .errors import InvalidMeshError, UnsupportedDimensionError

__all__ = [
    "TensorMesh",
    "build_tensor_mesh",
    "gradient_operator",
    "divergence_operator",
    "face_average_operator",
    "face_coefficient",
    "face_coefficient_jacobian",
    "interp_mesh_to_mesh",
    "MeshTransfer",
]


class TensorMesh:
    """d-dimensional tensor-product grid defined by per-axis cell widths.

    Parameters
    ----------
    cell_widths : sequence of array_like
        One array of strictly positive widths per axis (meters).
    origin : array_like, optional
        Coordinate of the lower-left corner. Defaults to zeros.
    """

    def __init__(self, cell_widths, origin=None):
        dim = len(cell_widths)
        if dim not in (2, 3):
            raise UnsupportedDimensionError(f"mesh dimension must be 2 or 3, got {dim}")
        widths = []
        for ax, w in enumerate(cell_widths):
            w = np.atleast_1d(np.asarray(w, dtype=float)).ravel()
            if w.size == 0:
                raise InvalidMeshError(f"axis {ax} has no cells")
            if not np.all(np.isfinite(w)) or np.any(w <= 0.0):
                raise InvalidMeshError(f"axis {ax} has non-positive cell widths")
            widths.append(w)
        if origin is None:
            origin = np.zeros(dim)
        origin = np.asarray(origin, dtype=float).ravel()
        if origin.size != dim:
            raise InvalidMeshError(f"origin must have {dim} entries, got {origin.size}")

        self.dim = dim
        self.cell_widths = tuple(widths)
        self.origin = origin

    @property
    def shape(self):
        """Number of cells per axis."""
        return tuple(w.size for w in self.cell_widths)

    @property
    def n_cells(self):
        return int(np.prod(self.shape))

    @property
    def n_nodes(self):
        return int(np.prod([n + 1 for n in self.shape]))

    def n_faces(self, axis):
        """Total (boundary included) number of faces normal to `axis`."""
        return int(np.prod([n + 1 if ax == axis else n for ax, n in enumerate(self.shape)]))

    def n_interior_faces(self, axis):
        return int(np.prod([n - 1 if ax == axis else n for ax, n in enumerate(self.shape)]))

    @property
    def n_interior_faces_total(self):
        return sum(self.n_interior_faces(ax) for ax in range(self.dim))

    def cell_centers_1d(self, axis):
        w = self.cell_widths[axis]
        return self.origin[axis] + np.cumsum(w) - 0.5 * w

    @property
    def cell_centers(self):
        """(n_cells, dim) array of cell centers, Fortran-ordered flattening."""
        axes = [self.cell_centers_1d(ax) for ax in range(self.dim)]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([g.ravel(order="F") for g in grids])

    @property
    def cell_volumes(self):
        return reduce(np.kron, reversed(self.cell_widths))

    def interior_face_areas(self, axis):
        """Measure of each interior face normal to `axis` (F-ordered)."""
        arrs = [
            np.ones(max(n - 1, 0)) if ax == axis else self.cell_widths[ax]
            for ax, n in enumerate(self.shape)
        ]
        return reduce(np.kron, reversed(arrs))

    @property
    def interior_face_areas_all(self):
        return np.concatenate([self.interior_face_areas(ax) for ax in range(self.dim)])

    @property
    def extent(self):
        """(dim, 2) array of domain bounds."""
        lo = self.origin
        hi = self.origin + np.array([w.sum() for w in self.cell_widths])
        return np.column_stack([lo, hi])

    def is_uniform(self, axis=None):
        axes = range(self.dim) if axis is None else [axis]
        return all(np.allclose(self.cell_widths[ax], self.cell_widths[ax][0]) for ax in axes)

    def closest_cell(self, point):
        """Linear index of the cell whose center is nearest to `point`."""
        point = np.asarray(point, dtype=float)
        sub = []
        for ax in range(self.dim):
            c = self.cell_centers_1d(ax)
            sub.append(int(np.argmin(np.abs(c - point[ax]))))
        return int(np.ravel_multi_index(sub, self.shape, order="F"))

    def __repr__(self):
        return f"TensorMesh(shape={self.shape}, origin={tuple(self.origin)})"

    def __eq__(self, other):
        if not isinstance(other, TensorMesh):
            return NotImplemented
        return (
            self.dim == other.dim
            and all(np.array_equal(a, b) for a, b in zip(self.cell_widths, other.cell_widths))
            and np.array_equal(self.origin, other.origin)
        )


def build_tensor_mesh(dim, widths, origin=None):
    """Create a :class:`TensorMesh`, checking `dim` against the width lists."""
    if dim not in (2, 3):
        raise UnsupportedDimensionError(f"mesh dimension must be 2 or 3, got {dim}")
    if len(widths) != dim:
        raise InvalidMeshError(f"expected {dim} width lists, got {len(widths)}")
    return TensorMesh(widths, origin=origin)


def _interior_diff_1d(widths):
    """(n-1) x n two-point difference, scaled by 1/center-to-center distance."""
    n = widths.size
    if n < 2:
        return sp.csr_matrix((0, n))
    inv_dist = 1.0 / (0.5 * (widths[:-1] + widths[1:]))
    return sp.diags([-inv_dist, inv_dist], offsets=[0, 1], shape=(n - 1, n), format="csr")


def _interior_avg_1d(n):
    """(n-1) x n unweighted two-point average."""
    if n < 2:
        return sp.csr_matrix((0, n))
    half = 0.5 * np.ones(n - 1)
    return sp.diags([half, half], offsets=[0, 1], shape=(n - 1, n), format="csr")


def _kron_axis(mesh, op_1d, axis):
    """Lift a 1D operator on `axis` to the full mesh (F-order Kronecker)."""
    mats = [
        op_1d if ax == axis else sp.identity(n, format="csr")
        for ax, n in enumerate(mesh.shape)
    ]
    return reduce(lambda a, b: sp.kron(b, a, format="csr"), mats)


def gradient_operator(mesh):
    """Cell-centered values to interior-face differences.

    Stacks the per-axis blocks; row f holds +-1/d for the two cells adjacent
    to interior face f, where d is the distance between their centers.
    """
    blocks = [
        _kron_axis(mesh, _interior_diff_1d(mesh.cell_widths[ax]), ax)
        for ax in range(mesh.dim)
    ]
    return sp.vstack(blocks, format="csr")


def divergence_operator(mesh):
    """Interior-face values to cells, the negative volume-weighted adjoint of the gradient.

    Constructed as D = -V^-1 G^T V_f so the discrete identity V D = -G^T V_f
    holds exactly.
    """
    grad = gradient_operator(mesh)
    inv_vol = 1.0 / mesh.cell_volumes
    areas = mesh.interior_face_areas_all
    return (-sp.diags(inv_vol) @ grad.T @ sp.diags(areas)).tocsr()


def face_average_operator(mesh):
    """Unweighted two-point average from cells to interior faces (rows sum to 1)."""
    blocks = [_kron_axis(mesh, _interior_avg_1d(n), ax) for ax, n in enumerate(mesh.shape)]
    return sp.vstack(blocks, format="csr")


def face_coefficient(mesh, sigma, mode="harmonic", avg=None):
    """Average a positive cell coefficient onto interior faces.

    Harmonic averaging (the default, physically correct for conductivity-like
    coefficients) is 1 / mean(1/sigma); arithmetic averaging is mean(sigma).
    """
    sigma = np.asarray(sigma, dtype=float)
    if avg is None:
        avg = face_average_operator(mesh)
    if mode == "arithmetic":
        return avg @ sigma
    if mode == "harmonic":
        return 1.0 / (avg @ (1.0 / sigma))
    raise ValueError(f"unknown averaging mode {mode!r}")


def face_coefficient_jacobian(mesh, sigma, mode="harmonic", avg=None):
    """Sparse derivative of :func:`face_coefficient` with respect to `sigma`."""
    sigma = np.asarray(sigma, dtype=float)
    if avg is None:
        avg = face_average_operator(mesh)
    if mode == "arithmetic":
        return avg
    if mode == "harmonic":
        face = 1.0 / (avg @ (1.0 / sigma))
        return (sp.diags(face**2) @ avg @ sp.diags(1.0 / sigma**2)).tocsr()
    raise ValueError(f"unknown averaging mode {mode!r}")


@dataclass
class MeshTransfer:
    """Interpolation matrix between two meshes plus clamping metadata."""

    matrix: sp.csr_matrix
    clamped_rows: np.ndarray  # destination cells whose center left the source hull

    @property
    def any_clamped(self):
        return self.clamped_rows.size > 0


def _interp_1d(src_centers, dst_centers):
    """1D linear interpolation matrix with clamping outside the center hull."""
    n_src = src_centers.size
    n_dst = dst_centers.size
    if n_src == 1:
        mat = sp.csr_matrix((np.ones(n_dst), (np.arange(n_dst), np.zeros(n_dst, dtype=int))),
                            shape=(n_dst, 1))
        clamped = np.abs(dst_centers - src_centers[0]) > 1e-12 * max(1.0, abs(src_centers[0]))
        return mat, clamped

    hi = np.searchsorted(src_centers, dst_centers)
    clamped = (dst_centers < src_centers[0]) | (dst_centers > src_centers[-1])
    hi = np.clip(hi, 1, n_src - 1)
    lo = hi - 1
    t = (dst_centers - src_centers[lo]) / (src_centers[hi] - src_centers[lo])
    t = np.clip(t, 0.0, 1.0)
    rows = np.repeat(np.arange(n_dst), 2)
    cols = np.column_stack([lo, hi]).ravel()
    vals = np.column_stack([1.0 - t, t]).ravel()
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(n_dst, n_src))
    mat.sum_duplicates()
    return mat, clamped


def interp_mesh_to_mesh(src, dst, tol=1e-9):
    """Multilinear cell-center interpolation from `src` onto `dst`.

    Rows are convex combinations (nonnegative weights summing to 1); the
    destination domain must be contained in the source domain up to `tol`
    of the source extent. Destination centers outside the source center
    hull are clamped and reported in the result metadata.
    """
    if src.dim != dst.dim:
        raise InvalidMeshError(f"source dim {src.dim} != destination dim {dst.dim}")
    src_ext, dst_ext = src.extent, dst.extent
    slack = tol * np.maximum(src_ext[:, 1] - src_ext[:, 0], 1.0)
    if np.any(dst_ext[:, 0] < src_ext[:, 0] - slack) or np.any(dst_ext[:, 1] > src_ext[:, 1] + slack):
        raise InvalidMeshError("destination domain is not contained in the source domain")

    mats, clamped_1d = [], []
    for ax in range(src.dim):
        mat, clamped = _interp_1d(src.cell_centers_1d(ax), dst.cell_centers_1d(ax))
        mats.append(mat)
        clamped_1d.append(clamped)

    full = reduce(lambda a, b: sp.kron(b, a, format="csr"), mats)
    # a destination cell is clamped if any of its axis coordinates were
    flags = np.zeros(dst.shape, dtype=bool, order="F")
    for ax in range(src.dim):
        shp = [1] * dst.dim
        shp[ax] = dst.shape[ax]
        flags |= clamped_1d[ax].reshape(shp)
    return MeshTransfer(matrix=full, clamped_rows=np.nonzero(flags.ravel(order="F"))[0])
