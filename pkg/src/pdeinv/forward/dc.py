"""Steady-current (DC resistivity) forward problem and sensitivities.

Solves div(sigma grad u) = q with zero-flux boundaries for dipole sources,
using the volume-scaled operator A(sigma) = G^T diag(V_f sigma_face) G. The
pure-Neumann operator has the constants as nullspace; dipole sources and
receivers are compatible with it, and the solve fixes the gauge either by
pinning one degree of freedom (direct path) or by mean deflation (CG path).

Sensitivity products are matrix-free and reuse the factorization cached by
the last forward solve.
"""

import hashlib

import numpy as np
import scipy.sparse as sp

from ..errors import (
    ForwardSolveError,
    InvalidCoefficientError,
    StaleCacheError,
)
from ..mesh import (
    face_average_operator,
    face_coefficient,
    face_coefficient_jacobian,
    gradient_operator,
)
from ..solvers import SolverHandle, factorize_spd, krylov_solve

__all__ = [
    "DcProblem",
    "assemble_dc_operator",
    "dc_forward",
    "dc_sens_matvec",
    "dc_sens_tmatvec",
]


def _model_hash(m):
    return hashlib.sha1(np.ascontiguousarray(m).tobytes()).hexdigest()


def _check_zero_column_sums(mat, what):
    sums = np.abs(np.asarray(mat.sum(axis=0)).ravel())
    scale = np.maximum(np.asarray(abs(mat).sum(axis=0)).ravel(), 1.0)
    bad = np.nonzero(sums > 1e-9 * scale)[0]
    if bad.size:
        raise InvalidCoefficientError(
            f"{what} columns {bad.tolist()} do not sum to zero; "
            "dipoles are required for the zero-flux operator"
        )


class DcProblem:
    """One batch of dipole experiments on a tensor mesh.

    Parameters
    ----------
    mesh : TensorMesh
    sources, receivers : sparse (n_cells, n) matrices
        Columns are zero-sum dipole functionals on cells.
    solver : SolverHandle or str
        "direct" (default) or a CG-family kind for matrix-free solving.
    averaging : str
        Cell-to-face coefficient averaging, "harmonic" (default) or "arithmetic".
    """

    physics = "dc"

    def __init__(self, mesh, sources, receivers, solver="direct", averaging="harmonic"):
        self.mesh = mesh
        self.sources = sp.csr_matrix(sources)
        self.receivers = sp.csr_matrix(receivers)
        if self.sources.shape[0] != mesh.n_cells or self.receivers.shape[0] != mesh.n_cells:
            raise InvalidCoefficientError("source/receiver rows must match the cell count")
        _check_zero_column_sums(self.sources, "source")
        _check_zero_column_sums(self.receivers, "receiver")
        self.solver = SolverHandle(kind=solver) if isinstance(solver, str) else solver
        self.averaging = averaging
        self.solve_count = 0
        self._ops = None
        self._cache = None

    @property
    def n_sources(self):
        return self.sources.shape[1]

    @property
    def n_receivers(self):
        return self.receivers.shape[1]

    def prepare(self):
        """Build the differential operators once; idempotent."""
        if self._ops is None:
            mesh = self.mesh
            self._ops = {
                "G": gradient_operator(mesh),
                "avg": face_average_operator(mesh),
                "vf": mesh.interior_face_areas_all,
                "vol": mesh.cell_volumes,
            }
        return self

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_ops"] = None  # rebuilt on the receiving side
        state["_cache"] = None  # factorizations/fields never travel
        return state

    def _check_cache(self, m):
        if self._cache is None:
            raise StaleCacheError("no forward solve has populated the cache")
        if self._cache["hash"] != _model_hash(m):
            raise StaleCacheError("cached fields belong to a different model")
        return self._cache

    # -- operations ---------------------------------------------------------

    def assemble(self, sigma):
        sigma = np.asarray(sigma, dtype=float)
        if sigma.size != self.mesh.n_cells:
            raise InvalidCoefficientError(
                f"expected {self.mesh.n_cells} cell conductivities, got {sigma.size}"
            )
        if np.any(sigma <= 0) or not np.all(np.isfinite(sigma)):
            raise InvalidCoefficientError("conductivity must be strictly positive and finite")
        self.prepare()
        ops = self._ops
        sig_f = face_coefficient(self.mesh, sigma, mode=self.averaging, avg=ops["avg"])
        return (ops["G"].T @ sp.diags(ops["vf"] * sig_f) @ ops["G"]).tocsr()

    def forward(self, sigma):
        """Solve all sources; returns (data, fields) and caches the factorization."""
        sigma = np.asarray(sigma, dtype=float)
        A = self.assemble(sigma)
        Q = self.sources.toarray()
        n = A.shape[0]
        if self.solver.kind == "direct":
            beta = A.diagonal().mean()
            pin = sp.csr_matrix(([beta], ([0], [0])), shape=A.shape)
            handle = factorize_spd(A + pin)
            solve = handle.factorization.solve
        else:
            deflate = _mean_deflation(n)

            def solve(rhs):
                x, report = krylov_solve(self.solver, A, rhs, deflate=deflate)
                if not report.all_converged:
                    raise ForwardSolveError(
                        "steady-current solve did not converge", report=report
                    )
                return x

        fields = solve(Q)
        self.solve_count += Q.shape[1]
        data = self.receivers.T @ fields
        sig_jac = face_coefficient_jacobian(
            self.mesh, sigma, mode=self.averaging, avg=self._ops["avg"]
        )
        self._cache = {
            "hash": _model_hash(sigma),
            "solve": solve,
            "fields": fields,
            "grad_fields": self._ops["G"] @ fields,
            "face_jac": sig_jac,
        }
        return data, fields

    def sens_matvec(self, sigma, v):
        """J v: one linearized solve per source against the cached factorization."""
        cache = self._check_cache(np.asarray(sigma, dtype=float))
        v = np.asarray(v, dtype=float)
        ops = self._ops
        dface = cache["face_jac"] @ v
        rhs = ops["G"].T @ ((ops["vf"] * dface)[:, np.newaxis] * cache["grad_fields"])
        z = cache["solve"](rhs)
        self.solve_count += rhs.shape[1]
        return -(self.receivers.T @ z)

    def sens_tmatvec(self, sigma, w):
        """J^T w via one adjoint solve per source (A is symmetric)."""
        cache = self._check_cache(np.asarray(sigma, dtype=float))
        w = np.asarray(w, dtype=float)
        if w.ndim == 1:
            w = w.reshape(self.n_receivers, self.n_sources, order="F")
        ops = self._ops
        y = cache["solve"](self.receivers @ w)
        self.solve_count += w.shape[1]
        s = ops["vf"] * np.einsum("ij,ij->i", cache["grad_fields"], ops["G"] @ y)
        return -(cache["face_jac"].T @ s)


def _mean_deflation(n):
    def deflate(x):
        return x - x.mean()

    return deflate


def assemble_dc_operator(problem, sigma_cells):
    """Volume-scaled diffusion operator A(sigma); symmetric, nullspace = constants."""
    return problem.assemble(sigma_cells)


def dc_forward(problem, m):
    return problem.forward(m)


def dc_sens_matvec(problem, m, v):
    return problem.sens_matvec(m, v)


def dc_sens_tmatvec(problem, m, w):
    return problem.sens_tmatvec(m, w)
