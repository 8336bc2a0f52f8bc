import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpamr.amr import AmrParams, adapt, band_indicator, mark_cells
from gpamr.app.config import load_config
from gpamr.geometry import BarComponent, ProjectionParams, composite_density, signed_distance
from gpamr.mesh import QuadMesh, circumradius

PARAMS = ProjectionParams()  # default k=10, s=3


def square_mesh(levels=2):
    return QuadMesh.rectangle(10.0, 10.0, 0.5, levels)


def one_bar(alpha, w=3.0):
    return [BarComponent((2.0, 5.0), (8.0, 5.0), w, alpha)]


def test_params_validation():
    with pytest.raises(ValueError):
        AmrParams(rho_threshold=1.0)
    with pytest.raises(ValueError):
        AmrParams(n_levels=-1)
    with pytest.raises(ValueError):
        AmrParams(band_factor=0.5)


def test_band_indicator_edges():
    assert list(band_indicator([0.0, 1e-9, 0.9, 0.9000001, 1.0], 0.9)) == [False, True, True, False, False]


def test_zero_size_bar_marks_nothing():
    amr = AmrParams(n_levels=2)
    assert len(mark_cells(square_mesh(), one_bar(0.0), PARAMS, amr)) == 0
    mesh, _ = adapt(square_mesh(), one_bar(0.0), PARAMS, amr)
    assert mesh.n_cells == square_mesh().n_cells


def test_full_bar_interior_stays_coarse():
    amr = AmrParams(n_levels=2)
    bar = one_bar(1.0, w=5.0)
    mesh, field = adapt(square_mesh(), bar, PARAMS, amr)
    # deeper than the coarse marking window plus one cell of balance closure
    h_c = 0.5
    d = signed_distance(mesh.centroids, bar)[:, 0]
    deep = d < -(circumradius(h_c, amr.band_factor) + h_c)
    assert deep.sum() > 10
    assert np.all(field.rho[deep] == 1.0)
    assert np.all(mesh.cell_level[deep] == 0)
    assert np.any(mesh.cell_level == amr.n_levels)  # the boundary band is refined
    # far outside stays coarse too
    far = d > circumradius(h_c, amr.band_factor) + h_c
    assert np.all(mesh.cell_level[far] == 0)


def test_intermediate_size_refines_footprint():
    amr = AmrParams(n_levels=2)
    mesh, field = adapt(square_mesh(), one_bar(0.5), PARAMS, amr)
    covered = composite_density(mesh.centroids, one_bar(1.0), PARAMS,
                                radius=circumradius(mesh.cell_h)) > 0
    assert np.all(mesh.cell_level[covered] == amr.n_levels)


def test_overlap_with_full_bar_not_refined():
    bars = [BarComponent((1.0, 5.0), (9.0, 5.0), 3.0, 1.0),
            BarComponent((5.0, 1.0), (5.0, 9.0), 3.0, 0.5)]
    amr = AmrParams(n_levels=2, rho_threshold=0.9)
    mesh, field = adapt(square_mesh(), bars, PARAMS, amr)
    overlap = (np.abs(mesh.centroids[:, 0] - 5.0) < 0.75) & (np.abs(mesh.centroids[:, 1] - 5.0) < 0.75)
    assert overlap.any()
    assert np.all(mesh.cell_level[overlap] == 0)
    assert np.all(field.rho[overlap] > 0.9)


def test_band_factor_nesting_and_consistency():
    bar = [BarComponent((1.3, 1.1), (8.7, 8.9), 2.0, 1.0)]
    base = square_mesh()
    m1 = mark_cells(base, bar, PARAMS, AmrParams(n_levels=2, band_factor=1.0))
    m2 = mark_cells(base, bar, PARAMS, AmrParams(n_levels=2, band_factor=2.0))
    assert set(m1) <= set(m2)
    # with the enlarged window, every cell the exact boundary crosses is at the finest level
    mesh, _ = adapt(base, bar, PARAMS, AmrParams(n_levels=2, band_factor=2.0))
    d = signed_distance(mesh.centroids, bar)[:, 0]
    crossing = np.abs(d) < 0.5 * mesh.cell_h
    assert np.all(mesh.cell_level[crossing] == 2)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_nesting_random_designs(seed):
    rng = np.random.default_rng(seed)
    z = np.column_stack([rng.uniform(0, 10, (4, 4)), rng.uniform(0.5, 3, 4), rng.uniform(0, 1, 4)])
    base = square_mesh()
    m1 = mark_cells(base, z, PARAMS, AmrParams(n_levels=2, band_factor=1.0))
    m2 = mark_cells(base, z, PARAMS, AmrParams(n_levels=2, band_factor=2.0))
    assert set(m1) <= set(m2)
    a, _ = adapt(base, z, PARAMS, AmrParams(n_levels=2))
    b, _ = adapt(a, z, PARAMS, AmrParams(n_levels=2))
    assert np.array_equal(a.levels, b.levels)
    assert a.is_balanced()


def test_levels_zero_is_coarsest():
    mesh, field = adapt(square_mesh(), one_bar(1.0), PARAMS, AmrParams(n_levels=0))
    assert mesh.n_cells == 400 and field.marking_evaluations == 0
    assert field.rho.shape == (400,)


def test_fewer_cells_than_uniform():
    for bar in (one_bar(1.0), [BarComponent((1.3, 1.1), (8.7, 8.9), 2.0, 1.0)]):
        mesh, _ = adapt(square_mesh(), bar, PARAMS, AmrParams(n_levels=2))
        assert mesh.n_cells < square_mesh().refine_uniform(2).n_cells


def test_analysis_radius_is_circumscribed():
    mesh, field = adapt(square_mesh(), one_bar(1.0), PARAMS, AmrParams(n_levels=2))
    np.testing.assert_allclose(field.radius, np.sqrt(2) * mesh.cell_h / 2)


def test_mbb_initial_design_finest_size():
    cfg = load_config("mbb")
    mesh, _ = adapt(cfg.coarse_mesh(), cfg.design, cfg.projection, cfg.amr)
    assert mesh.cell_h.min() == 0.0625
    assert cfg.coarse_mesh().n_cells == 1600
    assert 1600 < mesh.n_cells < 25600


def test_frozen_region_always_fine():
    cfg = load_config("lbracket")
    mesh, _ = adapt(cfg.coarse_mesh(), cfg.design, cfg.projection, cfg.amr)
    c = mesh.centroids
    strip = (c[:, 0] > 98) & (c[:, 1] > 34) & (c[:, 1] < 40)
    assert strip.any() and np.all(mesh.cell_h[strip] == 1.0)
