"""Multiscale basis construction: patch solves, decay, projections."""

import json
import os

import numpy as np
import numpy.testing as npt
import pytest

from cemporo.assembly import assemble_operators
from cemporo.cembasis import (MultiscaleSpace, PatchSolver,
                              build_element_basis, build_global_basis_oracle,
                              build_offline_basis, galerkin_project)
from cemporo.grid import build_grids, oversample_element, partition_of_unity
from cemporo.material import synth_channels
from cemporo.spectral import build_aux_basis


@pytest.fixture(scope="module")
def setup():
    grid = build_grids(4, 4, 2)
    field = synth_channels(grid, 1.0, 100.0, seed=6)
    pou = partition_of_unity(grid)
    ops = assemble_operators(grid, field, pou)
    aux = build_aux_basis(ops, 2)
    return grid, ops, aux


def _dense_global_solve(ops, aux, family, rhs_col):
    """Penalized global system assembled and solved densely."""
    if family == "u":
        A = ops.stiff_u.toarray()
        U = (ops.aux_u @ aux.R_u).toarray()
    else:
        A = ops.stiff_p.toarray()
        U = (ops.aux_p @ aux.R_p).toarray()
    rhs = U[:, rhs_col]
    return np.linalg.solve(A + U @ U.T, rhs), rhs


def test_global_patch_matches_dense_solve(setup):
    grid, ops, aux = setup
    space = build_global_basis_oracle(ops, aux)
    for family, basis in (("u", space.basis_u), ("p", space.basis_p)):
        for col in (0, 5, 17):
            expected, _ = _dense_global_solve(ops, aux, family, col)
            mine = np.asarray(basis[:, col].todense()).ravel()
            scale = np.linalg.norm(expected)
            npt.assert_allclose(mine, expected, atol=1e-11 * scale)


def test_offline_columns_satisfy_defining_equation(setup):
    grid, ops, aux = setup
    space = build_offline_basis(ops, aux, 1)
    from cemporo.cembasis import _SolverCache
    cache = _SolverCache(ops, aux)
    for family, basis, origin in (("u", space.basis_u, space.origin_u),
                                  ("p", space.basis_p, space.origin_p)):
        for j, org in enumerate(origin):
            patch = oversample_element(grid, org["element"], org["layers"])
            solver = cache.get(patch, family)
            pos = int(np.searchsorted(solver.aux_cols,
                                      org["element"] * 2 + org["mode"]))
            rhs = np.asarray(solver.U[:, pos].todense()).ravel()
            psi = np.asarray(basis[:, j].todense()).ravel()[solver.index]
            res = solver.residual(psi, rhs)
            assert res <= 1e-12 * np.linalg.norm(rhs)


def test_basis_dimensions_and_origins(setup):
    grid, ops, aux = setup
    space = build_offline_basis(ops, aux, 2)
    assert space.n_u == 2 * grid.n_coarse_cells
    assert space.n_p == 2 * grid.n_coarse_cells
    assert [o["element"] for o in space.origin_u[:4]] == [0, 0, 1, 1]
    assert [o["mode"] for o in space.origin_u[:4]] == [0, 1, 0, 1]
    assert all(o["kind"] == "offline" for o in space.origin_p)
    # columns are supported on their patch only
    patch = oversample_element(grid, 0, 2)
    outside = np.setdiff1d(np.arange(ops.dofs.n_p),
                           ops.dofs.node_positions(patch.interior_fine_nodes))
    col = np.asarray(space.basis_p[:, 0].todense()).ravel()
    npt.assert_allclose(col[outside], 0.0, atol=0)


def test_columns_decay_with_layers():
    grid = build_grids(6, 6, 3)
    field = synth_channels(grid, 1.0, 1.0, n_channels=0, n_inclusions=0)
    ops = assemble_operators(grid, field, partition_of_unity(grid))
    aux = build_aux_basis(ops, 3)
    for family, A in (("u", ops.stiff_u), ("p", ops.stiff_p)):
        mats = {}
        for layers in (1, 2, 3):
            cols, _ = build_element_basis(ops, aux, family, 14, layers)
            mats[layers] = np.column_stack(cols)
        ratios = []
        for layers in (1, 2):
            d = mats[layers + 1] - mats[layers]
            num = np.sqrt(np.einsum("ij,ij->j", d, A @ d))
            den = np.sqrt(np.einsum("ij,ij->j", mats[layers],
                                    A @ mats[layers]))
            ratios.append(float((num / den).max()))
        assert ratios[1] < ratios[0] < 1.0


def test_build_rejects_negative_layers(setup):
    _, ops, aux = setup
    with pytest.raises(ValueError):
        build_offline_basis(ops, aux, -1)


def test_space_copy_is_independent(setup):
    _, ops, aux = setup
    space = build_offline_basis(ops, aux, 1)
    clone = space.copy()
    clone.append("p", [np.zeros(ops.dofs.n_p)], [{"kind": "online"}])
    assert clone.n_p == space.n_p + 1
    assert space.origin_p[-1]["kind"] == "offline"


def test_space_save(tmp_path, setup):
    _, ops, aux = setup
    space = build_offline_basis(ops, aux, 1)
    stem = str(tmp_path / "space")
    space.save(stem)
    data = np.load(stem + "_basis.npz")
    assert tuple(data["u_shape"]) == (ops.dofs.n_u, space.n_u)
    with open(stem + "_basis.json") as fh:
        manifest = json.load(fh)
    assert manifest["layers"] == 1
    assert len(manifest["origin_p"]) == space.n_p


def test_galerkin_projection_matrices(setup):
    _, ops, aux = setup
    space = build_offline_basis(ops, aux, 2)
    co = galerkin_project(ops, space)
    R = space.basis_p.toarray()
    npt.assert_allclose(co.stiff_p, R.T @ ops.stiff_p.toarray() @ R,
                        atol=1e-12)
    w = np.linalg.eigvalsh(co.stiff_u)
    assert w.min() > 0.0
    w = np.linalg.eigvalsh(co.mass_p)
    assert w.min() > 0.0


def test_patch_solver_refinement_accuracy(setup):
    grid, ops, aux = setup
    patch = oversample_element(grid, 5, 1)
    solver = PatchSolver(ops, aux, patch, "p")
    rng = np.random.default_rng(3)
    rhs = rng.normal(size=solver.n)
    psi = solver.solve(rhs)
    assert solver.residual(psi, rhs) <= 1e-12 * np.linalg.norm(rhs)
