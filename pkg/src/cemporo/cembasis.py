"""Multiscale basis construction by penalized local energy minimization.

Each auxiliary eigenfunction of a coarse cell seeds one basis function,
computed on the oversampled patch around the cell with zero trace on the
patch boundary. The local system couples the stiffness with a rank-k penalty
built from the weighted mass applied to every auxiliary eigenvector living on
the patch; the penalized solve is performed in sparse bordered form

    [[A, U], [U^T, -I]] [psi, y] = [rhs, 0],   U = M_patch R_patch,

with one step of iterative refinement. Factorizations are cached per patch
rectangle, so a patch covering the whole domain is factorized once.
"""

import json

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import oversample_element
from .assembly import restrict


class PatchSolver:
    """Penalized local solver for one family on one patch."""

    def __init__(self, ops, aux, patch, family):
        po = restrict(ops, patch)
        self.patch = patch
        self.family = family
        cols = aux.columns_in_cells(family, patch.cells)
        if family == "u":
            self.A = po.stiff_u
            R = aux.R_u[po.u_index][:, cols]
            self.U = (po.aux_u @ R).tocsc()
            self.index = po.u_index
        else:
            self.A = po.stiff_p
            R = aux.R_p[po.p_index][:, cols]
            self.U = (po.aux_p @ R).tocsc()
            self.index = po.p_index
        self.aux_cols = cols
        n = self.A.shape[0]
        k = self.U.shape[1]
        bordered = sp.bmat(
            [[self.A, self.U],
             [self.U.T, -sp.identity(k, format="csc")]], format="csc")
        self.n = n
        self.k = k
        self.lu = spla.splu(bordered)

    def solve(self, rhs):
        """Solve the penalized system for a patch-local right-hand side."""
        b = np.concatenate([rhs, np.zeros(self.k)])
        x = self.lu.solve(b)
        # one refinement pass keeps the variational residual at round-off
        r1 = rhs - self.A @ x[:self.n] - self.U @ x[self.n:]
        r2 = x[self.n:] - self.U.T @ x[:self.n]
        x += self.lu.solve(np.concatenate([r1, -r2]))
        return x[:self.n]

    def residual(self, psi, rhs):
        """Norm of A psi + U U^T psi - rhs, the defining equation of the solve."""
        return float(np.linalg.norm(
            self.A @ psi + self.U @ (self.U.T @ psi) - rhs))


class _SolverCache:
    def __init__(self, ops, aux):
        self.ops = ops
        self.aux = aux
        self._store = {}

    def get(self, patch, family):
        key = (family, patch.cells[0], patch.cells[-1], patch.cells.size)
        if key not in self._store:
            self._store[key] = PatchSolver(self.ops, self.aux, patch, family)
        return self._store[key]


class MultiscaleSpace:
    """Columns of the reduced displacement and pressure spaces.

    Basis matrices act from coarse coefficients to interior fine unknowns.
    Provenance rows record where every column came from.
    """

    def __init__(self, ops, aux, layers):
        self.ops = ops
        self.aux = aux
        self.layers = layers
        self.basis_u = sp.csc_matrix((ops.dofs.n_u, 0))
        self.basis_p = sp.csc_matrix((ops.dofs.n_p, 0))
        self.origin_u = []
        self.origin_p = []

    @property
    def n_u(self):
        return self.basis_u.shape[1]

    @property
    def n_p(self):
        return self.basis_p.shape[1]

    def append(self, family, columns, origins):
        cols = sp.csc_matrix(np.column_stack(columns))
        if family == "u":
            self.basis_u = sp.hstack([self.basis_u, cols], format="csc")
            self.origin_u.extend(origins)
        else:
            self.basis_p = sp.hstack([self.basis_p, cols], format="csc")
            self.origin_p.extend(origins)

    def copy(self):
        out = MultiscaleSpace(self.ops, self.aux, self.layers)
        out.basis_u = self.basis_u.copy()
        out.basis_p = self.basis_p.copy()
        out.origin_u = list(self.origin_u)
        out.origin_p = list(self.origin_p)
        return out

    def save(self, stem):
        """Binary dump of both basis matrices plus a provenance manifest."""
        np.savez(stem + "_basis.npz",
                 u_data=self.basis_u.data, u_indices=self.basis_u.indices,
                 u_indptr=self.basis_u.indptr, u_shape=self.basis_u.shape,
                 p_data=self.basis_p.data, p_indices=self.basis_p.indices,
                 p_indptr=self.basis_p.indptr, p_shape=self.basis_p.shape)
        with open(stem + "_basis.json", "w") as fh:
            json.dump({"layers": self.layers,
                       "origin_u": self.origin_u,
                       "origin_p": self.origin_p}, fh, indent=1)
            fh.write("\n")


def build_element_basis(ops, aux, family, element, layers, cache=None):
    """Zero-extended basis columns seeded by one element's auxiliary modes.

    Returns (columns, origins) with one column per auxiliary mode of the
    element, each a full-length interior-dof vector.
    """
    cache = cache or _SolverCache(ops, aux)
    patch = oversample_element(ops.grid, element, layers)
    solver = cache.get(patch, family)
    count = aux.n_u if family == "u" else aux.n_p
    n_full = ops.dofs.n_u if family == "u" else ops.dofs.n_p
    base = element * count
    cols, orig = [], []
    for j in range(count):
        pos = np.searchsorted(solver.aux_cols, base + j)
        rhs = np.asarray(solver.U[:, pos].todense()).ravel()
        psi = solver.solve(rhs)
        full = np.zeros(n_full)
        full[solver.index] = psi
        cols.append(full)
        orig.append({"kind": "offline", "family": family,
                     "element": int(element), "mode": int(j),
                     "layers": int(layers)})
    return cols, orig


def build_offline_basis(ops, aux, layers, cache=None):
    """One basis function per auxiliary eigenfunction, patches of given depth."""
    if layers < 0:
        raise ValueError("layers must be nonnegative")
    grid = ops.grid
    space = MultiscaleSpace(ops, aux, layers)
    cache = cache or _SolverCache(ops, aux)
    for family in ("u", "p"):
        cols, orig = [], []
        for e in range(grid.n_coarse_cells):
            ecols, eorig = build_element_basis(ops, aux, family, e, layers,
                                               cache)
            cols.extend(ecols)
            orig.extend(eorig)
        space.append(family, cols, orig)
    return space


def build_global_basis_oracle(ops, aux):
    """Same construction with every patch equal to the whole domain."""
    layers = max(ops.grid.ncx, ops.grid.ncy)
    return build_offline_basis(ops, aux, layers)


class CoarseOperators:
    """Dense projections of the fine forms onto a multiscale space."""

    def __init__(self, ops, space):
        Ru, Rp = space.basis_u, space.basis_p
        self.space = space
        self.stiff_u = (Ru.T @ (ops.stiff_u @ Ru)).toarray()
        self.stiff_p = (Rp.T @ (ops.stiff_p @ Rp)).toarray()
        self.mass_p = (Rp.T @ (ops.mass_p @ Rp)).toarray()
        self.coupling = (Rp.T @ (ops.coupling @ Ru)).toarray()


def galerkin_project(ops, space):
    return CoarseOperators(ops, space)
