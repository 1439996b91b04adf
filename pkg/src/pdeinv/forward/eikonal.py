"""First-arrival travel times by the fast marching method, with sensitivities.

Solves |grad u|^2 = m (m = squared slowness, u = 0 at the source cell) with
the first-order Godunov upwind stencil. Cells are accepted in causality order
from a binary heap (ties broken by lowest linear cell index), which makes the
linearized residual lower-triangular under that ordering: sensitivity
products are plain forward/backward triangular substitutions.

Marching over a single source is inherently sequential; parallelism lives
across sources.
"""

import hashlib
import heapq
from math import sqrt

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve_triangular

from ..errors import InvalidCoefficientError, InvalidMeshError, StaleCacheError

__all__ = [
    "EikonalProblem",
    "fast_marching_solve",
    "eikonal_sens_matvec",
    "eikonal_sens_tmatvec",
]


def _model_hash(m):
    return hashlib.sha1(np.ascontiguousarray(m).tobytes()).hexdigest()


class EikonalProblem:
    """Travel-time experiments: point sources at cells, sampled at receiver cells.

    The mesh must have uniform spacing per axis (stencil assumption).
    """

    physics = "eikonal"

    def __init__(self, mesh, source_cells, receivers):
        if not mesh.is_uniform():
            raise InvalidMeshError("fast marching requires uniform spacing per axis")
        self.mesh = mesh
        self.source_cells = [int(c) for c in source_cells]
        n = mesh.n_cells
        for c in self.source_cells:
            if not 0 <= c < n:
                raise InvalidMeshError(f"source cell {c} outside mesh with {n} cells")
        self.receivers = sp.csr_matrix(receivers)
        if self.receivers.shape[0] != n:
            raise InvalidCoefficientError("receiver rows must match the cell count")
        self.solve_count = 0
        self._nbr = None
        self._cache = None

    @property
    def n_sources(self):
        return len(self.source_cells)

    @property
    def n_receivers(self):
        return self.receivers.shape[1]

    def prepare(self):
        """Precompute the neighbor table: (n_cells, dim, 2) linear indices, -1 at walls."""
        if self._nbr is not None:
            return self
        mesh = self.mesh
        shape = mesh.shape
        n = mesh.n_cells
        nbr = np.full((n, mesh.dim, 2), -1, dtype=np.int64)
        idx = np.arange(n).reshape(shape, order="F")
        for ax in range(mesh.dim):
            lo = [slice(None)] * mesh.dim
            hi = [slice(None)] * mesh.dim
            lo[ax] = slice(1, None)
            hi[ax] = slice(None, -1)
            nbr[idx[tuple(lo)].ravel(order="F"), ax, 0] = idx[tuple(hi)].ravel(order="F")
            nbr[idx[tuple(hi)].ravel(order="F"), ax, 1] = idx[tuple(lo)].ravel(order="F")
        self._nbr = nbr
        self._h = np.array([w[0] for w in mesh.cell_widths])
        return self

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_nbr"] = None
        state["_cache"] = None
        return state

    def _march(self, m, src):
        """March one source; returns (u, order, parents, pvals)."""
        nbr = self._nbr
        h = self._h
        inv_h2 = 1.0 / h**2
        dim = self.mesh.dim
        n = self.mesh.n_cells
        u = np.full(n, np.inf)
        accepted = np.zeros(n, dtype=bool)
        parents = np.full((n, dim), -1, dtype=np.int64)
        u[src] = 0.0
        heap = [(0.0, src)]
        order = np.empty(n, dtype=np.int64)
        count = 0
        while heap:
            t, i = heapq.heappop(heap)
            if accepted[i]:
                continue
            accepted[i] = True
            order[count] = i
            count += 1
            for ax in range(dim):
                for side in range(2):
                    j = nbr[i, ax, side]
                    if j < 0 or accepted[j]:
                        continue
                    cand, par = self._local_solve(j, u, accepted, nbr, inv_h2, m[j], dim)
                    if cand < u[j]:
                        u[j] = cand
                        parents[j] = par
                        heapq.heappush(heap, (cand, j))
        if count != n:
            raise InvalidCoefficientError("marching failed to reach every cell")
        return u, order, parents

    @staticmethod
    def _local_solve(j, u, accepted, nbr, inv_h2, mj, dim):
        """Godunov update at cell j from its accepted upwind neighbors."""
        avals, aw, apar = [], [], []
        for ax in range(dim):
            best = np.inf
            best_idx = -1
            for side in range(2):
                k = nbr[j, ax, side]
                if k >= 0 and accepted[k] and u[k] < best:
                    best = u[k]
                    best_idx = k
            if best_idx >= 0:
                avals.append(best)
                aw.append(inv_h2[ax])
                apar.append((ax, best_idx))
        # try the full stencil first; drop the largest neighbor value until
        # the causality condition u >= max(used values) holds
        sel = sorted(range(len(avals)), key=lambda q: avals[q])
        while sel:
            s0 = sum(aw[q] for q in sel)
            s1 = sum(aw[q] * avals[q] for q in sel)
            s2 = sum(aw[q] * avals[q] ** 2 for q in sel)
            disc = s1 * s1 - s0 * (s2 - mj)
            if disc >= 0.0:
                cand = (s1 + sqrt(disc)) / s0
                if cand >= avals[sel[-1]]:
                    par = np.full(dim, -1, dtype=np.int64)
                    for q in sel:
                        par[apar[q][0]] = apar[q][1]
                    return cand, par
            sel.pop()
        return np.inf, np.full(dim, -1, dtype=np.int64)

    def _triangular_system(self, m, u, order, parents, src):
        """Assemble the linearized residual in acceptance ordering.

        Rows: 2 sum_ax (u_i - u_p)/h^2 on the diagonal, -2 (u_i - u_p)/h^2 at
        each upwind parent; the source row is the identity. Asserts strict
        lower-triangularity under the ordering.
        """
        n = u.size
        inv_h2 = 1.0 / self._h**2
        rank = np.empty(n, dtype=np.int64)
        rank[order] = np.arange(n)
        rows, cols, vals = [], [], []
        diag = np.zeros(n)
        diag[src] = 1.0
        for i in range(n):
            if i == src:
                continue
            for ax in range(self.mesh.dim):
                p = parents[i, ax]
                if p < 0:
                    continue
                if rank[p] >= rank[i]:
                    raise AssertionError("upwind parent accepted after its child")
                c = 2.0 * (u[i] - u[p]) * inv_h2[ax]
                diag[i] += c
                rows.append(rank[i])
                cols.append(rank[p])
                vals.append(-c)
        rows.extend(range(n))
        cols.extend(range(n))
        vals.extend(diag[order])
        L = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        return L, rank

    def _check_cache(self, m):
        if self._cache is None:
            raise StaleCacheError("no forward solve has populated the cache")
        if self._cache["hash"] != _model_hash(np.asarray(m, dtype=float)):
            raise StaleCacheError("cached marching state belongs to a different model")
        return self._cache

    def forward(self, m):
        """Fast-marching solve per source; returns (data, fields) and caches orders."""
        m = np.asarray(m, dtype=float)
        if m.size != self.mesh.n_cells:
            raise InvalidCoefficientError(
                f"expected {self.mesh.n_cells} squared-slowness values, got {m.size}"
            )
        if np.any(m <= 0) or not np.all(np.isfinite(m)):
            raise InvalidCoefficientError("squared slowness must be strictly positive")
        self.prepare()
        n = self.mesh.n_cells
        fields = np.empty((n, self.n_sources))
        per_source = []
        for k, src in enumerate(self.source_cells):
            u, order, parents = self._march(m, src)
            L, rank = self._triangular_system(m, u, order, parents, src)
            fields[:, k] = u
            per_source.append({"order": order, "rank": rank, "L": L, "Lt": L.T.tocsr(),
                               "src": src})
        self.solve_count += self.n_sources
        data = self.receivers.T @ fields
        self._cache = {"hash": _model_hash(m), "per_source": per_source, "fields": fields}
        return data, fields

    def causality_orders(self):
        """Acceptance order per source from the cached solve."""
        if self._cache is None:
            raise StaleCacheError("no forward solve has populated the cache")
        return [entry["order"].copy() for entry in self._cache["per_source"]]

    def stencil_signature(self, m):
        """Hash of orders and stencils; used to screen finite-difference probes."""
        cache = self._check_cache(m)
        hasher = hashlib.sha1()
        for entry in cache["per_source"]:
            hasher.update(entry["order"].tobytes())
            hasher.update(entry["L"].indices.tobytes())
        return hasher.hexdigest()

    def sens_matvec(self, m, v):
        """J v by forward substitution in acceptance order, per source."""
        cache = self._check_cache(m)
        v = np.asarray(v, dtype=float)
        out = np.empty((self.n_receivers, self.n_sources))
        for k, entry in enumerate(cache["per_source"]):
            rhs = v.copy()
            rhs[entry["src"]] = 0.0
            z = spsolve_triangular(entry["L"], rhs[entry["order"]], lower=True)
            # z lives in acceptance ordering; scatter back to cell ordering
            out[:, k] = self.receivers.T @ z[entry["rank"]]
        self.solve_count += self.n_sources
        return out

    def sens_tmatvec(self, m, w):
        """J^T w by transposed substitution in reverse acceptance order."""
        cache = self._check_cache(m)
        w = np.asarray(w, dtype=float)
        if w.ndim == 1:
            w = w.reshape(self.n_receivers, self.n_sources, order="F")
        g = np.zeros(self.mesh.n_cells)
        for k, entry in enumerate(cache["per_source"]):
            rhs = self.receivers @ w[:, k]
            y = spsolve_triangular(entry["Lt"], rhs[entry["order"]], lower=False)
            full = y[entry["rank"]]
            full[entry["src"]] = 0.0
            g += full
        self.solve_count += self.n_sources
        return g


def fast_marching_solve(problem, m):
    """Returns (data, fields, per-source causality orders)."""
    data, fields = problem.forward(m)
    return data, fields, problem.causality_orders()


def eikonal_sens_matvec(problem, m, v):
    return problem.sens_matvec(m, v)


def eikonal_sens_tmatvec(problem, m, w):
    return problem.sens_tmatvec(m, w)
