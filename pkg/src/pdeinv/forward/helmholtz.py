"""Frequency-domain acoustic forward problem with an attenuating absorbing layer.

The operator is the volume-scaled discretization of

    div(rho^-1 grad u) + omega^2 (1 + i gamma) m u = q,

assembled as H(m) = G^T diag(V_f / rho_f) G - omega^2 diag(V (1 + i gamma) m),
a complex-symmetric (non-Hermitian) matrix. gamma vanishes in the region of
interest and ramps up quadratically inside the padded absorbing layer.

The model m is squared slowness on cells; 2D is the supported desk-scale
dimension (3D assembles but is untested at scale).
"""

import hashlib

import numpy as np
import scipy.sparse as sp

from ..errors import (
    ForwardSolveError,
    InvalidCoefficientError,
    InvalidPaddingError,
    StaleCacheError,
)
from ..mesh import face_average_operator, gradient_operator
from ..solvers import SolverHandle, factorize_symmetric, krylov_solve

__all__ = [
    "HelmholtzProblem",
    "build_attenuation_layer",
    "assemble_helmholtz",
    "helmholtz_forward",
    "helmholtz_sens_matvec",
    "helmholtz_sens_tmatvec",
]

_SIDE_TAGS = {"x-": (0, 0), "x+": (0, 1), "y-": (1, 0), "y+": (1, 1),
              "z-": (2, 0), "z+": (2, 1)}


def build_attenuation_layer(mesh, pad_cells, strength=1.0, free_surface_side="y+"):
    """Quadratic attenuation ramp toward every padded boundary.

    Zero in the interior, strength at the outermost cell layer, and no ramp
    on the free-surface side. `pad_cells` counts cells per padded side.
    """
    if pad_cells < 0:
        raise InvalidPaddingError("pad_cells must be nonnegative")
    gamma = np.zeros(mesh.shape, order="F")
    if pad_cells == 0:
        return gamma.ravel(order="F")
    free = _SIDE_TAGS.get(free_surface_side) if free_surface_side else None
    if free_surface_side and free is None:
        raise InvalidPaddingError(f"unknown side tag {free_surface_side!r}")
    for ax, n in enumerate(mesh.shape):
        if 2 * pad_cells >= n:
            raise InvalidPaddingError(
                f"pad of {pad_cells} cells per side does not fit axis {ax} with {n} cells"
            )
        # distance (in cells, measured at centers) into the pad, 0 outside it
        i = np.arange(n, dtype=float)
        lo_ramp = np.maximum(pad_cells - i - 0.5, 0.0) / pad_cells
        hi_ramp = np.maximum(i - (n - pad_cells) + 0.5, 0.0) / pad_cells
        for side, ramp in ((0, lo_ramp), (1, hi_ramp)):
            if free is not None and free == (ax, side):
                continue
            shp = [1] * mesh.dim
            shp[ax] = n
            gamma = np.maximum(gamma, strength * (ramp**2).reshape(shp))
    return gamma.ravel(order="F")


def _model_hash(m):
    return hashlib.sha1(np.ascontiguousarray(m).tobytes()).hexdigest()


class HelmholtzProblem:
    """One frequency's batch of sources/receivers on a padded mesh.

    Parameters
    ----------
    mesh : TensorMesh (already padded)
    rho : float or cell vector, density
    gamma : cell vector, attenuation (see build_attenuation_layer)
    omega : angular frequency (rad/s)
    sources, receivers : sparse (n_cells, n) injection/sampling matrices
    batch_size : sources solved per factorization application (memory knob)
    cache_dtype : optional demoted dtype (e.g. complex64) for cached fields
    """

    physics = "helmholtz"

    def __init__(self, mesh, rho, gamma, omega, sources, receivers,
                 solver="direct", batch_size=None, cache_dtype=None):
        if omega <= 0:
            raise InvalidCoefficientError("omega must be positive")
        self.mesh = mesh
        n = mesh.n_cells
        self.rho = np.broadcast_to(np.asarray(rho, dtype=float), (n,)).copy()
        if np.any(self.rho <= 0):
            raise InvalidCoefficientError("density must be strictly positive")
        self.gamma = np.asarray(gamma, dtype=float)
        if self.gamma.size != n or np.any(self.gamma < 0):
            raise InvalidCoefficientError("gamma must be a nonnegative cell vector")
        self.omega = float(omega)
        self.sources = sp.csr_matrix(sources)
        self.receivers = sp.csr_matrix(receivers)
        self.solver = SolverHandle(kind=solver) if isinstance(solver, str) else solver
        self.batch_size = batch_size
        self.cache_dtype = cache_dtype
        self.solve_count = 0
        self._ops = None
        self._cache = None

    @property
    def n_sources(self):
        return self.sources.shape[1]

    @property
    def n_receivers(self):
        return self.receivers.shape[1]

    @property
    def frequency(self):
        return self.omega / (2.0 * np.pi)

    def prepare(self):
        if self._ops is None:
            mesh = self.mesh
            G = gradient_operator(mesh)
            avg = face_average_operator(mesh)
            rho_face = avg @ self.rho
            vf = mesh.interior_face_areas_all
            self._ops = {
                "stiffness": (G.T @ sp.diags(vf / rho_face) @ G).tocsr(),
                "mass_scale": mesh.cell_volumes * (1.0 + 1j * self.gamma),
            }
        return self

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_ops"] = None
        state["_cache"] = None
        return state

    def _check_cache(self, m):
        if self._cache is None:
            raise StaleCacheError("no forward solve has populated the cache")
        if self._cache["hash"] != _model_hash(np.asarray(m, dtype=float)):
            raise StaleCacheError("cached fields belong to a different model")
        return self._cache

    def assemble(self, m):
        m = np.asarray(m, dtype=float)
        if m.size != self.mesh.n_cells:
            raise InvalidCoefficientError(
                f"expected {self.mesh.n_cells} squared-slowness values, got {m.size}"
            )
        if np.any(m <= 0) or not np.all(np.isfinite(m)):
            raise InvalidCoefficientError("squared slowness must be strictly positive")
        self.prepare()
        mass = sp.diags(self._ops["mass_scale"] * m)
        return (self._ops["stiffness"] - self.omega**2 * mass).tocsr()

    def forward(self, m):
        """Factorize once and solve the sources in batches; returns (data, fields)."""
        m = np.asarray(m, dtype=float)
        H = self.assemble(m)
        Q = self.sources.toarray().astype(complex)
        nq = Q.shape[1]
        if self.solver.kind == "direct":
            handle = factorize_symmetric(H)
            solve = handle.factorization.solve
        else:
            def solve(rhs):
                x, report = krylov_solve(self.solver, H, rhs)
                if not report.all_converged:
                    raise ForwardSolveError("wavefield solve did not converge", report=report)
                return x

        step = self.batch_size or nq
        fields = np.empty((self.mesh.n_cells, nq), dtype=complex)
        for start in range(0, nq, step):
            fields[:, start:start + step] = solve(Q[:, start:start + step])
        self.solve_count += nq
        data = self.receivers.T @ fields
        cached_fields = fields.astype(self.cache_dtype) if self.cache_dtype else fields
        self._cache = {"hash": _model_hash(m), "solve": solve, "fields": cached_fields}
        return data, fields

    def _dmass(self, cache):
        """d(H u)/dm column scaling: -omega^2 V (1 + i gamma) u per source."""
        return -self.omega**2 * self._ops["mass_scale"][:, np.newaxis] * cache["fields"]

    def sens_matvec(self, m, v):
        """J v = -H^-1 (dH/dm v) u, projected onto receivers; complex data."""
        cache = self._check_cache(m)
        v = np.asarray(v, dtype=float)
        rhs = self._dmass(cache) * v[:, np.newaxis]
        z = cache["solve"](rhs)
        self.solve_count += rhs.shape[1]
        return -(self.receivers.T @ z)

    def sens_tmatvec(self, m, w):
        """Real part of the adjoint chain J^H w; the model space is real."""
        cache = self._check_cache(m)
        w = np.asarray(w)
        if w.ndim == 1:
            w = w.reshape(self.n_receivers, self.n_sources, order="F")
        y = cache["solve"](self.receivers @ np.conj(w))
        self.solve_count += w.shape[1]
        g = -np.einsum("ij,ij->i", self._dmass(cache), y)
        return np.real(g)


def assemble_helmholtz(problem, m):
    return problem.assemble(m)


def helmholtz_forward(problem, m):
    return problem.forward(m)


def helmholtz_sens_matvec(problem, m, v):
    return problem.sens_matvec(m, v)


def helmholtz_sens_tmatvec(problem, m, w):
    return problem.sens_tmatvec(m, w)
