"""Material fields: Lame parameters, storage format, synthetic generator."""

import numpy as np
import numpy.testing as npt
import pytest

from cemporo.grid import build_grids
from cemporo.material import (MaterialField, lame_from_E, load_field,
                              save_field, synth_channels)


def test_lame_reference_values():
    lam, mu = lame_from_E(1.0, 0.2)
    npt.assert_allclose([lam, mu], [0.2 / 0.72, 1.0 / 2.4], rtol=1e-12)
    lam, mu = lame_from_E(1.0, 0.0)
    npt.assert_allclose([lam, mu], [0.0, 0.5], rtol=1e-12)
    lam, mu = lame_from_E(1.0, 0.49)
    npt.assert_allclose([lam, mu], [16.442953020134228, 0.3355704697986577],
                        rtol=1e-12)
    # arrays go through elementwise
    lam, mu = lame_from_E(np.array([1.0, 2.0]), 0.2)
    npt.assert_allclose(mu, [1.0 / 2.4, 2.0 / 2.4])


def test_lame_rejects_invalid():
    with pytest.raises(ValueError):
        lame_from_E(1.0, 0.5)
    with pytest.raises(ValueError):
        lame_from_E(1.0, -1.0)
    with pytest.raises(ValueError):
        lame_from_E(0.0, 0.2)
    with pytest.raises(ValueError):
        lame_from_E(-2.0, 0.2)


def test_field_derived_quantities():
    g = build_grids(2, 2, 2)
    E = np.linspace(1.0, 4.0, g.n_fine_cells)
    kappa = 2.0 * E
    f = MaterialField(g, E, kappa, 0.25, 0.8, 2.0, 4.0)
    npt.assert_allclose(f.mobility, kappa / 4.0)
    lam, mu = lame_from_E(E, 0.25)
    npt.assert_allclose(f.p_wave_modulus, lam + 2.0 * mu)
    assert f.contrast() == pytest.approx(4.0)
    assert f.alpha == 0.8


def test_field_shape_mismatch():
    g = build_grids(2, 2, 2)
    with pytest.raises(ValueError):
        MaterialField(g, np.ones(5), np.ones(5), 0.2, 0.9, 1.0, 1.0)


def test_save_load_roundtrip(tmp_path):
    g = build_grids(3, 2, 2)
    rng = np.random.default_rng(11)
    E = np.exp(rng.normal(size=g.n_fine_cells))
    kappa = np.exp(rng.normal(size=g.n_fine_cells))
    f = MaterialField(g, E, kappa, 0.3, 0.7, 1.5, 2.5)
    stem = str(tmp_path / "field")
    save_field(f, stem)
    back = load_field(stem, g)
    npt.assert_array_equal(back.E, f.E)
    npt.assert_array_equal(back.kappa, f.kappa)
    assert back.poisson == f.poisson
    assert back.alpha == f.alpha
    assert back.biot_modulus == f.biot_modulus
    assert back.viscosity == f.viscosity


def test_load_field_grid_mismatch(tmp_path):
    g = build_grids(2, 2, 2)
    f = synth_channels(g, 1.0, 10.0, seed=1)
    stem = str(tmp_path / "field")
    save_field(f, stem)
    other = build_grids(3, 3, 2)
    with pytest.raises(ValueError):
        load_field(stem, other)


def test_synth_deterministic():
    g = build_grids(5, 5, 4)
    a = synth_channels(g, 1.0, 1e4, seed=3)
    b = synth_channels(g, 1.0, 1e4, seed=3)
    npt.assert_array_equal(a.E, b.E)
    c = synth_channels(g, 1.0, 1e4, seed=4)
    assert not np.array_equal(a.E, c.E)


def test_synth_contrast_and_values():
    g = build_grids(5, 5, 4)
    f = synth_channels(g, 2.0, 100.0, seed=0)
    vals = np.unique(f.E)
    npt.assert_allclose(vals, [2.0, 200.0])
    assert f.contrast() == pytest.approx(100.0)
    npt.assert_array_equal(f.kappa, f.E)


def test_synth_explicit_channels():
    g = build_grids(4, 4, 2)
    f = synth_channels(g, 1.0, 50.0, n_inclusions=0,
                       channels=[(0, 3, 1, 0, 8)])
    E = f.E.reshape(g.nfy, g.nfx)
    npt.assert_allclose(E[3, :], 50.0)
    mask = np.ones_like(E, dtype=bool)
    mask[3, :] = False
    npt.assert_allclose(E[mask], 1.0)


def test_synth_rejects_bad_parameters():
    g = build_grids(2, 2, 2)
    with pytest.raises(ValueError):
        synth_channels(g, 0.0, 10.0)
    with pytest.raises(ValueError):
        synth_channels(g, 1.0, 0.5)
