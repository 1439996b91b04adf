"""Sparse direct and iterative solvers behind a single handle interface.

The direct path is an envelope sparse Cholesky: reverse Cuthill-McKee
reordering followed by a banded factorization (LAPACK for real SPD, a
vectorized LDL^T for complex symmetric systems). Factorizations are
immutable after construction and cheap to reuse across many right-hand
sides, which is what makes sensitivity products affordable.

Iterative options are hand-rolled CG / preconditioned CG / BiCGSTAB plus a
classical block PCG. Stopping criterion everywhere is the relative residual
||b - A x|| / ||b||.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.linalg import lapack
from scipy.sparse.csgraph import reverse_cuthill_mckee
from scipy.sparse.linalg import spsolve_triangular

from .errors import (
    BreakdownError,
    DimensionMismatchError,
    NotSpdError,
    SingularPreconditionerError,
)

__all__ = [
    "SolverHandle",
    "SolveReport",
    "spmv",
    "factorize_spd",
    "factorize_symmetric",
    "krylov_solve",
    "make_preconditioner",
]

KRYLOV_KINDS = ("cg", "pcg_jacobi", "pcg_ssor", "bicgstab", "block_pcg")
ALL_KINDS = ("direct",) + KRYLOV_KINDS


def spmv(A, x):
    """Sparse matrix times vector or block; columns are independent."""
    x = np.asarray(x)
    if x.shape[0] != A.shape[1]:
        raise DimensionMismatchError(
            f"operator has {A.shape[1]} columns but operand has {x.shape[0]} rows"
        )
    return A @ x


def _permuted_band(A, perm):
    """Lower-band storage W[r, c] = (P A P^T)[c + r, c] of the permuted matrix."""
    n = A.shape[0]
    coo = A.tocoo()
    inv = np.empty(n, dtype=np.int64)
    inv[perm] = np.arange(n)
    rows = inv[coo.row]
    cols = inv[coo.col]
    keep = rows >= cols  # lower triangle only
    rows, cols, vals = rows[keep], cols[keep], coo.data[keep]
    bw = int((rows - cols).max()) if rows.size else 0
    W = np.zeros((bw + 1, n), dtype=coo.data.dtype)
    np.add.at(W, (rows - cols, cols), vals)
    return W, bw


def _rcm_permutation(A):
    pattern = A.copy()
    pattern.data = np.abs(pattern.data)
    return np.asarray(reverse_cuthill_mckee(pattern.tocsr(), symmetric_mode=True), dtype=np.int64)


class BandedCholeskyFactorization:
    """Sparse SPD factorization: RCM ordering + banded Cholesky."""

    def __init__(self, A):
        if A.shape[0] != A.shape[1]:
            raise DimensionMismatchError("matrix must be square")
        if np.iscomplexobj(A.data if sp.issparse(A) else A):
            raise NotSpdError("SPD factorization requires a real matrix")
        A = sp.csr_matrix(A)
        self.n = A.shape[0]
        self.perm = _rcm_permutation(A)
        W, self.bandwidth = _permuted_band(A, self.perm)
        try:
            self._factor = sla.cholesky_banded(W, lower=True, check_finite=False)
        except sla.LinAlgError as exc:
            raise NotSpdError(f"matrix is not positive definite: {exc}") from exc
        self.n_solves = 0

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        single = b.ndim == 1
        rhs = b[self.perm] if single else b[self.perm, :]
        x = sla.cho_solve_banded((self._factor, True), rhs, check_finite=False)
        out = np.empty_like(x)
        if single:
            out[self.perm] = x
            self.n_solves += 1
        else:
            out[self.perm, :] = x
            self.n_solves += b.shape[1]
        return out


class BandedLdlFactorization:
    """Banded LDL^T (no pivoting) for complex-symmetric or real-symmetric matrices."""

    def __init__(self, A, breakdown_rtol=1e-14):
        if A.shape[0] != A.shape[1]:
            raise DimensionMismatchError("matrix must be square")
        A = sp.csr_matrix(A)
        self.n = n = A.shape[0]
        self.perm = _rcm_permutation(A)
        W, bw = _permuted_band(A, self.perm)
        self.bandwidth = bw
        scale = np.abs(W[0]).max() if n else 1.0
        idx = np.add.outer(np.arange(bw), np.arange(bw)) if bw else None
        D = np.empty(n, dtype=W.dtype)
        for j in range(n):
            d = W[0, j]
            if abs(d) <= breakdown_rtol * scale:
                raise NotSpdError(f"zero pivot encountered at column {j} of the LDL factorization")
            w = min(bw, n - 1 - j)
            if w:
                u = W[1 : w + 1, j] / d
                upad = np.concatenate([u, np.zeros(w, dtype=W.dtype)])
                W[0:w, j + 1 : j + 1 + w] -= (d * upad[idx[:w, :w]]) * u[np.newaxis, :]
                W[1 : w + 1, j] = u
            D[j] = d
        self._L_band = W  # row 0 holds D, rows 1.. hold unit-L subdiagonals
        self._D = D
        self.n_solves = 0

    def _tbtrs(self, b, trans):
        fn = lapack.ztbtrs if np.iscomplexobj(self._L_band) else lapack.dtbtrs
        x, info = fn(self._L_band, b, uplo="L", trans=trans, diag="U")
        if info != 0:
            raise NotSpdError(f"triangular band solve failed with info={info}")
        return x

    def solve(self, b):
        b = np.asarray(b)
        if np.iscomplexobj(self._L_band) and not np.iscomplexobj(b):
            b = b.astype(complex)
        single = b.ndim == 1
        rhs = b[self.perm, np.newaxis] if single else b[self.perm, :]
        y = self._tbtrs(rhs, "N")
        y = y / self._D[:, np.newaxis]
        x = self._tbtrs(y, "T")
        out = np.empty_like(x)
        out[self.perm, :] = x
        self.n_solves += rhs.shape[1]
        return out[:, 0] if single else out


@dataclass
class SolverHandle:
    """Solver choice plus tolerance/limits and any cached factorization.

    kind is one of direct, cg, pcg_jacobi, pcg_ssor, bicgstab, block_pcg.
    """

    kind: str = "direct"
    tolerance: float = 1e-10
    max_iterations: int = 1000
    ssor_omega: float = 1.0
    factorization: object = None

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise ValueError(f"unknown solver kind {self.kind!r}; choose from {ALL_KINDS}")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


def factorize_spd(A, tolerance=1e-10, max_iterations=1):
    """Factorize a (caller-asserted) SPD sparse matrix for repeated solves."""
    fact = BandedCholeskyFactorization(A)
    return SolverHandle(kind="direct", tolerance=tolerance,
                        max_iterations=max_iterations, factorization=fact)


def factorize_symmetric(A, tolerance=1e-10, max_iterations=1):
    """LDL^T factorization for complex-symmetric (e.g. damped wave) operators."""
    fact = BandedLdlFactorization(A)
    return SolverHandle(kind="direct", tolerance=tolerance,
                        max_iterations=max_iterations, factorization=fact)


@dataclass
class SolveReport:
    """Per-column convergence record of a linear solve."""

    method: str
    iterations: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    converged: list = field(default_factory=list)

    @property
    def all_converged(self):
        return all(self.converged)

    @property
    def total_iterations(self):
        return int(sum(self.iterations))


def make_preconditioner(A, kind, omega=1.0):
    """Return an M^-1-apply closure for Jacobi or SSOR preconditioning.

    The SSOR preconditioner is M = (D/w + L) D^-1 (D/w + L)^T, symmetric
    whenever A is, as projected CG requires.
    """
    diag = np.asarray(A.diagonal())
    if np.any(diag == 0):
        raise SingularPreconditionerError("matrix has a zero diagonal entry")
    if kind == "jacobi":
        return lambda r: r / diag
    if kind == "ssor":
        if not 0.0 < omega < 2.0:
            raise ValueError("SSOR omega must lie in (0, 2)")
        lower = (sp.tril(A, -1) + sp.diags(diag / omega)).tocsr()
        upper = lower.T.tocsr()

        def apply(r):
            y = spsolve_triangular(lower, r, lower=True)
            return spsolve_triangular(upper, diag * y, lower=False)

        return apply
    raise ValueError(f"unknown preconditioner kind {kind!r}")


def _pcg(A, b, tol, maxit, M=None, deflate=None, callback=None):
    """Preconditioned CG on a single right-hand side."""
    norm_b = np.linalg.norm(b)
    if norm_b == 0:
        return np.zeros_like(b), 0, 0.0, True
    x = np.zeros_like(b)
    r = b.copy()
    if deflate is not None:
        r = deflate(r)
    z = M(r) if M is not None else r.copy()
    if deflate is not None:
        z = deflate(z)
    p = z.copy()
    rho = float(r @ z)
    it = 0
    relres = np.linalg.norm(r) / norm_b
    while relres > tol and it < maxit:
        q = A @ p
        alpha = rho / float(p @ q)
        x += alpha * p
        r -= alpha * q
        if deflate is not None:
            r = deflate(r)
        relres = np.linalg.norm(r) / norm_b
        it += 1
        if callback is not None:
            callback(x.copy())
        if relres <= tol:
            break
        z = M(r) if M is not None else r
        if deflate is not None:
            z = deflate(z)
        rho_new = float(r @ z)
        p = z + (rho_new / rho) * p
        rho = rho_new
    return x, it, relres, relres <= tol


def _block_pcg(A, B, tol, maxit, M=None):
    """Classical block PCG; all columns advance in one blocked iteration.

    No deflation of converged/rank-deficient search blocks is attempted;
    a singular P^T A P block raises a breakdown error.
    """
    norm_b = np.linalg.norm(B, axis=0)
    live = norm_b > 0
    X = np.zeros_like(B)
    if not live.any():
        return X, 0, np.zeros(B.shape[1]), [True] * B.shape[1]
    R = B.copy()
    Z = M(R) if M is not None else R.copy()
    P = Z.copy()
    C = R.T @ Z
    it = 0
    relres = np.linalg.norm(R, axis=0) / np.where(live, norm_b, 1.0)
    while np.any(relres[live] > tol) and it < maxit:
        Q = A @ P
        S = P.T @ Q
        try:
            alpha = np.linalg.solve(S, C)
        except np.linalg.LinAlgError as exc:
            raise BreakdownError(f"block PCG search block became singular: {exc}",
                                 iterations=it) from exc
        X += P @ alpha
        R -= Q @ alpha
        it += 1
        relres = np.linalg.norm(R, axis=0) / np.where(live, norm_b, 1.0)
        if not np.any(relres[live] > tol):
            break
        Z = M(R) if M is not None else R
        C_new = R.T @ Z
        try:
            beta = np.linalg.solve(C, C_new)
        except np.linalg.LinAlgError as exc:
            raise BreakdownError(f"block PCG correlation block became singular: {exc}",
                                 iterations=it) from exc
        P = Z + P @ beta
        C = C_new
    conv = [bool(relres[j] <= tol or not live[j]) for j in range(B.shape[1])]
    return X, it, relres, conv


def _bicgstab(A, b, tol, maxit, M=None):
    """BiCGSTAB on one right-hand side; supports complex operators."""
    norm_b = np.linalg.norm(b)
    if norm_b == 0:
        return np.zeros_like(b), 0, 0.0, True
    x = np.zeros(A.shape[0], dtype=np.result_type(A.dtype, b.dtype))
    r = b.astype(x.dtype)
    rhat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros_like(x)
    p = np.zeros_like(x)
    breakdown_floor = np.finfo(float).tiny * 1e4
    relres = np.linalg.norm(r) / norm_b
    it = 0
    while relres > tol and it < maxit:
        rho_new = np.vdot(rhat, r)
        if abs(rho_new) < breakdown_floor * norm_b**2:
            raise BreakdownError("BiCGSTAB breakdown: rho ~ 0", iterations=it)
        beta = (rho_new / rho) * (alpha / omega)
        p = r + beta * (p - omega * v)
        phat = M(p) if M is not None else p
        v = A @ phat
        denom = np.vdot(rhat, v)
        if abs(denom) < breakdown_floor * norm_b**2:
            raise BreakdownError("BiCGSTAB breakdown: rhat orthogonal to v", iterations=it)
        alpha = rho_new / denom
        s = r - alpha * v
        if np.linalg.norm(s) / norm_b <= tol:
            x = x + alpha * phat
            it += 1
            relres = np.linalg.norm(b - A @ x) / norm_b
            break
        shat = M(s) if M is not None else s
        t = A @ shat
        tt = np.vdot(t, t)
        if abs(tt) < breakdown_floor:
            raise BreakdownError("BiCGSTAB breakdown: t vanished", iterations=it)
        omega = np.vdot(t, s) / tt
        if abs(omega) < breakdown_floor:
            raise BreakdownError("BiCGSTAB breakdown: omega ~ 0", iterations=it)
        x = x + alpha * phat + omega * shat
        r = s - omega * t
        rho = rho_new
        it += 1
        relres = np.linalg.norm(r) / norm_b
    return x, it, relres, relres <= tol


def krylov_solve(handle, A, B, M=None, deflate=None):
    """Solve A X = B per the handle's method; returns (X, SolveReport).

    Multi-column B is solved column by column except for block_pcg, which
    advances all columns in one blocked iteration. Non-convergence is
    reported, not raised; exact breakdowns raise BreakdownError.
    """
    if A.shape[0] != A.shape[1]:
        raise DimensionMismatchError("operator must be square")
    B = np.asarray(B)
    if B.shape[0] != A.shape[0]:
        raise DimensionMismatchError(
            f"operator has {A.shape[0]} rows but right-hand side has {B.shape[0]}"
        )
    single = B.ndim == 1
    Bmat = B[:, np.newaxis] if single else B
    kind = handle.kind

    if kind == "direct":
        fact = handle.factorization
        if fact is None:
            fact = (BandedLdlFactorization(A) if np.iscomplexobj(A.data)
                    else BandedCholeskyFactorization(A))
            handle.factorization = fact
        X = fact.solve(Bmat)
        res = np.linalg.norm(Bmat - A @ X, axis=0)
        scale = np.linalg.norm(Bmat, axis=0)
        rel = res / np.where(scale > 0, scale, 1.0)
        report = SolveReport("direct", [1] * Bmat.shape[1], list(rel), [True] * Bmat.shape[1])
        return (X[:, 0] if single else X), report

    complex_system = np.iscomplexobj(A.data) or np.iscomplexobj(Bmat)
    if kind in ("cg", "pcg_jacobi", "pcg_ssor", "block_pcg") and complex_system:
        raise NotSpdError(f"{kind} requires a real SPD system; use bicgstab for complex operators")

    if M is None:
        if kind == "pcg_jacobi":
            M = make_preconditioner(A, "jacobi")
        elif kind == "pcg_ssor":
            M = make_preconditioner(A, "ssor", omega=handle.ssor_omega)

    tol, maxit = handle.tolerance, handle.max_iterations
    if kind == "block_pcg":
        X, it, rel, conv = _block_pcg(A, Bmat.astype(float), tol, maxit, M=M)
        report = SolveReport("block_pcg", [it] * Bmat.shape[1], list(rel), conv)
        return (X[:, 0] if single else X), report

    X = np.zeros(Bmat.shape, dtype=np.result_type(A.dtype, Bmat.dtype))
    report = SolveReport(kind)
    for j in range(Bmat.shape[1]):
        b = Bmat[:, j]
        if kind == "bicgstab":
            x, it, rel, ok = _bicgstab(A, b, tol, maxit, M=M)
        else:
            x, it, rel, ok = _pcg(A, b.astype(float), tol, maxit, M=M, deflate=deflate)
        X[:, j] = x
        report.iterations.append(it)
        report.residuals.append(float(rel))
        report.converged.append(bool(ok))
    return (X[:, 0] if single else X), report
