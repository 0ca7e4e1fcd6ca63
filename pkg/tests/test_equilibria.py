import numpy as np
import pytest
from scipy import integrate

from heavytail_kinetics.equilibria import (DistributionField, build_velocity_grid, c_1s, equilibrium_frame, eval_M1,
                                           eval_M2, grid_quadrature_errors, japanese, stable_density,
                                           weighted_inner_H, weighted_norm_H)
from heavytail_kinetics.errors import GridError
from heavytail_kinetics.geometry import build_spatial_grid


def test_grid_is_symmetric(vgrid):
    assert np.array_equal(vgrid.nodes[vgrid.pairing], -vgrid.nodes)
    assert np.array_equal(vgrid.weights[vgrid.pairing], vgrid.weights)
    assert np.all(vgrid.weights > 0.0)
    assert vgrid.weights.sum() == pytest.approx(2.0 * vgrid.vmax, rel=1e-12)
    assert vgrid.positive.size == vgrid.negative.size == vgrid.n // 2


@pytest.mark.parametrize("grading", ["geometric", "power"])
def test_grid_nodes_inside_cells(grading):
    grid = build_velocity_grid(0.75, vmax=100.0, n=32, grading=grading)
    assert np.all(grid.edges[:-1] < grid.nodes) and np.all(grid.nodes < grid.edges[1:])
    assert grid.edges[0] == -100.0 and grid.edges[-1] == 100.0


@pytest.mark.parametrize("kwargs", [{"n": 63}, {"n": 2}, {"vmax": 0.5}, {"grading": "linear"}])
def test_bad_grids_rejected(kwargs):
    params = dict(s=0.75, vmax=100.0, n=32)
    params.update(kwargs)
    with pytest.raises(GridError):
        build_velocity_grid(**params)


def test_quadrature_check_rejects_coarse_grid():
    with pytest.raises(GridError, match="quadrature"):
        build_velocity_grid(0.75, vmax=1.0e3, n=8, eps_check=[1.0], rtol=1e-6)


def test_quadrature_converges_on_fine_grid():
    grid = build_velocity_grid(0.75, vmax=1.0e3, n=256)
    errors = grid_quadrature_errors(grid, 0.75, [1.0])
    assert errors["mass"] < 5e-4


def test_cauchy_quadrature_matches_truncated_arctan():
    # integral of 1/(pi(1+v^2)) over [-V, V] is (2/pi) arctan(V), about 6.4e-4 short of 1 at V = 1e3
    grid = build_velocity_grid(0.5, vmax=1.0e3, n=512)
    total = grid.integrate(1.0 / (np.pi * (1.0 + grid.nodes ** 2)))
    assert total == pytest.approx(2.0 / np.pi * np.arctan(1.0e3), abs=1e-4)
    assert total < 1.0


def test_M1_normalized_and_symmetric(M1, vgrid):
    assert vgrid.integrate(M1.values) == pytest.approx(1.0, abs=1e-13)
    assert np.array_equal(M1.values, M1.values[vgrid.pairing])
    assert np.all(M1.values > 0.0)
    lo, hi = M1.tail_bounds
    assert 0.0 < lo <= hi
    # unit discrete mass differs from the continuum normalization only by truncation and quadrature
    assert M1.mass_renorm == pytest.approx(1.0, rel=0.1)


def test_M1_profile_matches_nodes(M1, vgrid):
    np.testing.assert_allclose(M1.at(vgrid.nodes), M1.values, rtol=1e-13)


def test_c_eps_monotone(M1):
    assert M1.c_eps(1.0) < M1.c_eps(0.5) < M1.c_eps(0.01) < 1.0


def test_second_moment_grows_as_eps_shrinks(M1):
    assert M1.second_moment(0.5) < M1.second_moment(0.1) < M1.second_moment(0.01)


def test_cauchy_closed_form():
    # s = 1/2: the characteristic function is exp(-|xi|)
    v = np.array([0.0, 1.0, 3.0, 10.0, 40.0, 100.0])
    np.testing.assert_allclose(stable_density(v, 0.5), 1.0 / (np.pi * (1.0 + v * v)), rtol=1e-7)


def test_gaussian_limit():
    v = np.array([0.0, 0.5, 1.0, 2.0])
    np.testing.assert_allclose(stable_density(v, 1.0), np.exp(-0.5 * v * v) / np.sqrt(2.0 * np.pi), rtol=1e-8)


def test_stable_density_is_even():
    v = np.array([0.3, 2.0, 35.0])
    np.testing.assert_allclose(stable_density(-v, 0.75), stable_density(v, 0.75))


def test_M2_positive_symmetric_with_power_tail():
    grid = build_velocity_grid(0.75, vmax=1.0e3, n=64)
    M2 = eval_M2(0.75, grid)
    assert grid.integrate(M2.values) == pytest.approx(1.0, abs=1e-13)
    assert np.array_equal(M2.values, M2.values[grid.pairing])
    assert np.all(M2.values > 0.0)
    tail = M2.values * japanese(grid.nodes) ** 2.5
    # bounded above and below by multiples of <v>^{-1-2s}
    assert tail.max() / tail.min() < 20.0


@pytest.mark.parametrize("s", [0.0, 1.0, 1.2])
def test_equilibria_reject_s_outside_unit_interval(s, vgrid):
    with pytest.raises(GridError):
        eval_M1(s, vgrid)


def test_c_1s_normalizes():
    total = integrate.quad(lambda v: c_1s(0.75) * (1 + v * v) ** -1.25, -np.inf, np.inf)[0]
    assert total == pytest.approx(1.0, rel=1e-8)


def test_distribution_field_shape_checked(vgrid):
    xgrid = build_spatial_grid(8, "torus")
    with pytest.raises(GridError):
        DistributionField(np.zeros((7, vgrid.n)), xgrid, vgrid)


def test_weighted_norm_of_equilibrium(M1, vgrid):
    xgrid = build_spatial_grid(8, "torus")
    f = DistributionField(np.tile(M1.values, (8, 1)), xgrid, vgrid)
    assert weighted_norm_H(f, M1) == pytest.approx(1.0, rel=1e-12)
    assert weighted_inner_H(f, f, M1) == pytest.approx(f.mass(), rel=1e-12)
    np.testing.assert_allclose(f.perp(M1), 0.0, atol=1e-15)


def test_equilibrium_frame(M1):
    frame = equilibrium_frame(M1)
    assert list(frame.columns) == ["v", "w", "M", "tail_ratio"]
    assert len(frame) == M1.grid.n
