"""Local spectral problems on coarse cells and the auxiliary space they span.

Each coarse cell carries two generalized eigenproblems over all of its fine
nodes (no boundary conditions): elastic stiffness against the weighted
displacement mass, and flow stiffness against the weighted pressure mass.
The lowest J eigenfunctions per cell form the auxiliary space used to pin
down the multiscale basis.
"""

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla


def _fix_signs(vecs):
    """Flip columns so the entry of largest magnitude is positive."""
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def _deflated_eigh(A, S, kernel):
    """Generalized eigensolve of (A, S) with an exactly known A-kernel.

    The kernel columns span functions with zero energy by construction
    (rigid motions, constants); solving on their S-orthogonal complement
    reports them as exact zero eigenvalues instead of eigensolver roundoff
    scaled by ||A||. Returns all eigenvalues ascending and S-orthonormal
    eigenvectors, the kernel block first.
    """
    L = sla.cholesky(S, lower=True)
    # standard form A v = w S v  ->  (L^-1 A L^-T) y = w y with y = L^T v
    X = sla.solve_triangular(L, A, lower=True)
    At = sla.solve_triangular(L, X.T, lower=True).T
    At = 0.5 * (At + At.T)
    Y = L.T @ kernel
    Q, _ = np.linalg.qr(Y, mode="complete")
    k = kernel.shape[1]
    Qc = Q[:, k:]
    w_red, Z = sla.eigh(Qc.T @ At @ Qc)
    w = np.concatenate([np.zeros(k), w_red])
    Y_all = np.hstack([Q[:, :k], Qc @ Z])
    vecs = sla.solve_triangular(L, Y_all, lower=True, trans="T")
    return w, vecs


class ElementSpectra:
    """Eigenpairs of one coarse cell: values for the whole local spectrum,
    vectors for the retained leading block."""

    def __init__(self, element, nodes, eigvals_u, vecs_u, eigvals_p, vecs_p):
        self.element = element
        self.nodes = nodes
        self.eigvals_u = eigvals_u
        self.vecs_u = vecs_u
        self.eigvals_p = eigvals_p
        self.vecs_p = vecs_p


def solve_local_spectral(ops, element, n_u, n_p=None, extra=4):
    """Solve both local eigenproblems on one coarse cell.

    Returns an ElementSpectra with all eigenvalues (ascending) and the first
    n_u / n_p eigenvectors plus `extra` spares, mass-orthonormal, signs fixed.
    """
    grid = ops.grid
    if n_p is None:
        n_p = n_u
    cells = grid.fine_cells_of_coarse_cell(element)
    nodes, mats = ops.local_matrices(cells)
    nu_dim = 2 * nodes.size
    np_dim = nodes.size
    if n_u < 1 or n_u > nu_dim or n_p < 1 or n_p > np_dim:
        raise ValueError("requested eigenpair count outside the local dimension")

    # the energy kernels are known in closed form: the two translations and
    # the rotation (linear fields are reproduced exactly by bilinear
    # elements), and the constant pressure
    xy = grid.fine_node_xy(nodes)
    center = xy.mean(axis=0)
    ker_u = np.zeros((nu_dim, 3))
    ker_u[0::2, 0] = 1.0
    ker_u[1::2, 1] = 1.0
    ker_u[0::2, 2] = -(xy[:, 1] - center[1])
    ker_u[1::2, 2] = xy[:, 0] - center[0]

    su = 0.5 * (mats["aux_u"] + mats["aux_u"].T)
    au = 0.5 * (mats["stiff_u"] + mats["stiff_u"].T)
    wu, vu = _deflated_eigh(au, su, ker_u)
    ku = min(nu_dim, n_u + extra)
    vu = _fix_signs(vu[:, :ku])

    sp_ = 0.5 * (mats["aux_p"] + mats["aux_p"].T)
    ap = 0.5 * (mats["stiff_p"] + mats["stiff_p"].T)
    wp, vp = _deflated_eigh(ap, sp_, np.ones((np_dim, 1)))
    kp = min(np_dim, n_p + extra)
    vp = _fix_signs(vp[:, :kp])

    return ElementSpectra(element, nodes, wu, vu, wp, vp)


class AuxBasis:
    """Auxiliary space: the retained local eigenfunctions of every coarse cell.

    R_u / R_p hold the zero-extended eigenvectors as columns over interior
    unknowns; aux_mass_cols_* hold the element-local weighted mass applied to
    each eigenvector (used by the projection diagnostics).
    """

    def __init__(self, ops, n_u, n_p=None):
        if n_p is None:
            n_p = n_u
        self.ops = ops
        self.grid = ops.grid
        self.n_u = int(n_u)
        self.n_p = int(n_p)
        if self.n_u < 1 or self.n_p < 1:
            raise ValueError("need at least one eigenfunction per family")
        self.spectra = [solve_local_spectral(ops, e, self.n_u, self.n_p)
                        for e in range(self.grid.n_coarse_cells)]
        d = ops.dofs
        self.R_u = self._collect(d, "u")
        self.R_p = self._collect(d, "p")

    def _collect(self, d, family):
        rows, cols, vals = [], [], []
        count = self.n_u if family == "u" else self.n_p
        for e, spec in enumerate(self.spectra):
            pos = d.node_positions(spec.nodes)
            keep = pos >= 0
            if family == "u":
                dof = np.column_stack([2 * pos[keep], 2 * pos[keep] + 1]).ravel()
                sel = np.column_stack(
                    [2 * np.where(keep)[0], 2 * np.where(keep)[0] + 1]).ravel()
                vecs = spec.vecs_u[sel][:, :count]
            else:
                dof = pos[keep]
                vecs = spec.vecs_p[keep][:, :count]
            for j in range(count):
                rows.append(dof)
                cols.append(np.full(dof.size, e * count + j, dtype=np.int64))
                vals.append(vecs[:, j])
        n = d.n_u if family == "u" else d.n_p
        total = self.grid.n_coarse_cells * count
        return sp.csc_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, total))

    def columns_in_cells(self, family, cell_set):
        """Column indices of eigenfunctions whose coarse cell lies in cell_set."""
        count = self.n_u if family == "u" else self.n_p
        cells = np.asarray(sorted(cell_set))
        return (cells[:, None] * count + np.arange(count)[None, :]).ravel()


def build_aux_basis(ops, n_u, n_p=None):
    return AuxBasis(ops, n_u, n_p)


class _PiCache:
    def __init__(self):
        self.solve = None


def project_pi(aux, family, v):
    """Orthogonal projection onto the auxiliary space in the weighted mass product.

    Input and output are interior-unknown vectors. The projection is exact
    (idempotent and self-adjoint in the weighted product) over the span of the
    zero-extended eigenvectors.
    """
    ops = aux.ops
    if family == "u":
        R = aux.R_u
        M = ops.aux_u
        key = "_pi_cache_u"
    elif family == "p":
        R = aux.R_p
        M = ops.aux_p
        key = "_pi_cache_p"
    else:
        raise ValueError("family must be 'u' or 'p'")
    cache = getattr(aux, key, None)
    if cache is None:
        cache = _PiCache()
        gram = (R.T @ (M @ R)).toarray()
        try:
            fac = sla.cho_factor(gram)
            cache.solve = lambda b: sla.cho_solve(fac, b)
        except np.linalg.LinAlgError:
            # redundant auxiliary sets (full local dimension) make the Gram
            # singular; the projection onto the span is still well defined
            pinv = np.linalg.pinv(gram, rcond=1e-12)
            cache.solve = lambda b: pinv @ b
        setattr(aux, key, cache)
    coeff = cache.solve(R.T @ (M @ v))
    return R @ coeff


class SpectralDiagnostics:
    """First excluded eigenvalue per family and the layer decay factor."""

    def __init__(self, min_excluded_u, min_excluded_p, degenerate):
        self.min_excluded_u = float(min_excluded_u)
        self.min_excluded_p = float(min_excluded_p)
        self.min_excluded = min(self.min_excluded_u, self.min_excluded_p)
        self.degenerate = bool(degenerate)

    def decay_factor(self, layers):
        """Theoretical contraction bound for the given oversampling depth.

        Returns inf when the retained block does not clear the local zero
        modes (the configuration is reported, not rejected).
        """
        lam = self.min_excluded
        if self.degenerate or lam <= 0.0:
            return np.inf
        base = 1.0 / (2.0 * (1.0 + np.sqrt(lam)))
        return (1.0 + 1.0 / lam) * (1.0 + base) ** (1 - layers)


def spectral_diagnostics(aux):
    ex_u = min(spec.eigvals_u[aux.n_u] if aux.n_u < spec.eigvals_u.size
               else np.inf for spec in aux.spectra)
    ex_p = min(spec.eigvals_p[aux.n_p] if aux.n_p < spec.eigvals_p.size
               else np.inf for spec in aux.spectra)
    # the local kernels are three rigid motions and one constant; keeping
    # fewer modes leaves a zero in the excluded block
    degenerate = aux.n_u < 3 or ex_u <= 0.0 or ex_p <= 0.0
    return SpectralDiagnostics(ex_u, ex_p, degenerate)
