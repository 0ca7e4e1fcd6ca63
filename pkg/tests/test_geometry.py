import numpy as np
import pytest
from dataclasses import replace

from heavytail_kinetics.equilibria import DistributionField, build_velocity_grid, c_1s, eval_M1, japanese
from heavytail_kinetics.errors import ConfigError, DiscretizationError, GridError
from heavytail_kinetics.geometry import (D_op, D_perp, TraceData, apply_reflection, attach_walls, boundary_dissipation,
                                         boundary_decomposition_residual, boundary_inner, build_spatial_grid,
                                         discrete_cM, extract_traces, outgoing_flux, outgoing_indices, trace_frame,
                                         wall_flux)


@pytest.fixture
def slab(M1):
    return attach_walls(build_spatial_grid(8, "slab", 0.5, 1.0), M1, M1.s)


def _random_trace(wall, M, seed):
    rng = np.random.default_rng(seed)
    out = outgoing_indices(M.grid, wall.normal)
    return TraceData(wall, M.grid, M.values[out] * (1.0 + rng.normal(size=out.size)))


def test_spatial_grids():
    slab = build_spatial_grid(10, "slab", 0.2, 0.3)
    assert slab.dx == pytest.approx(0.1)
    assert [w.normal for w in slab.walls] == [-1, 1]
    np.testing.assert_allclose(slab.centers, (np.arange(10) + 0.5) / 10)
    torus = build_spatial_grid(10, "torus")
    assert torus.periodic and torus.walls == ()


@pytest.mark.parametrize("args", [(1, "slab"), (8, "sphere"), (8, "slab", 1.5)])
def test_bad_spatial_grids(args):
    with pytest.raises((ConfigError, GridError)):
        build_spatial_grid(*args)


def test_outgoing_halves_mirror(vgrid):
    left, right = outgoing_indices(vgrid, -1), outgoing_indices(vgrid, 1)
    assert np.all(vgrid.nodes[left] < 0) and np.all(vgrid.nodes[right] > 0)
    np.testing.assert_array_equal(np.sort(vgrid.pairing[left]), right)


def test_discrete_cM_normalizes_flux(M1, vgrid):
    for normal in (-1, 1):
        c_M = discrete_cM(M1, vgrid, normal)
        out = outgoing_indices(vgrid, normal)
        assert c_M * np.sum(M1.values[out] * vgrid.nodes[out] * normal * vgrid.weights[out]) == pytest.approx(1.0)


def test_diffusive_walls_need_finite_flux(M1, vgrid):
    with pytest.raises(ConfigError):
        discrete_cM(M1, vgrid, 1, s=0.4, alpha=0.5)


def test_attach_walls_scales_cM(M1):
    xgrid = build_spatial_grid(8, "slab", 0.5, 0.5)
    exact = attach_walls(xgrid, M1, M1.s)
    perturbed = attach_walls(xgrid, M1, M1.s, cm_scale=1.01)
    for a, b in zip(exact.walls, perturbed.walls):
        assert b.c_M == pytest.approx(1.01 * a.c_M)


@pytest.mark.parametrize("alpha", [0.0, 0.3, 1.0])
def test_reflection_has_zero_flux(alpha, M1, slab):
    for seed, wall in enumerate(slab.walls):
        trace = apply_reflection(_random_trace(wall, M1, seed), alpha, M1, wall.c_M)
        scale = np.sum(np.abs(trace.full() * M1.grid.nodes * M1.grid.weights))
        assert abs(wall_flux(trace)) < 1e-13 * scale


def test_specular_reflection_mirrors(M1, slab):
    trace = _random_trace(slab.walls[0], M1, 0)
    reflected = apply_reflection(trace, 0.0, M1, slab.walls[0].c_M)
    np.testing.assert_array_equal(reflected.minus, trace.plus)
    full = reflected.full()
    np.testing.assert_array_equal(full[trace.in_idx], full[trace.out_idx])


def test_perturbed_cM_breaks_flux(M1, slab):
    wall = slab.walls[1]
    trace = TraceData(wall, M1.grid, M1.values[outgoing_indices(M1.grid, 1)])
    reflected = apply_reflection(trace, 1.0, M1, 1.01 * wall.c_M)
    assert wall_flux(reflected) == pytest.approx(-0.01 * outgoing_flux(trace), rel=1e-10)


def test_diffusive_part_orthogonal(M1, slab):
    for seed, wall in enumerate(slab.walls):
        trace = _random_trace(wall, M1, seed)
        d = replace(trace, plus=D_op(trace, M1, wall.c_M))
        dp = D_perp(trace, M1, wall.c_M)
        assert abs(boundary_inner(d, dp, M1)) < 1e-13 * boundary_inner(trace, trace, M1)
        assert boundary_inner(trace, trace, M1) == pytest.approx(
            boundary_inner(d, d, M1) + boundary_inner(dp, dp, M1), rel=1e-12)


def test_boundary_dissipation(M1, slab):
    traces = [_random_trace(w, M1, i) for i, w in enumerate(slab.walls)]
    assert boundary_dissipation(traces, M1) > 0.0
    equilibrium = [TraceData(w, M1.grid, 2.0 * M1.values[outgoing_indices(M1.grid, w.normal)]) for w in slab.walls]
    assert boundary_dissipation(equilibrium, M1) < 1e-28
    specular = [replace(t, wall=replace(t.wall, alpha=0.0)) for t in traces]
    assert boundary_dissipation(specular, M1) == 0.0


@pytest.mark.parametrize("alpha", [0.0, 0.4, 1.0])
def test_boundary_decomposition_holds_for_reflected_traces(alpha, M1, slab):
    phi = lambda v: 1.0 + np.tanh(v) + 0.3 * np.cos(v)
    for seed, wall in enumerate(slab.walls):
        for c_M in (wall.c_M, 1.3 * wall.c_M):
            trace = apply_reflection(_random_trace(wall, M1, seed), alpha, M1, c_M)
            assert boundary_decomposition_residual(phi, trace, alpha, M1, c_M) < 1e-10


def test_boundary_decomposition_detects_bad_trace(M1, slab):
    wall = slab.walls[0]
    trace = _random_trace(wall, M1, 0)
    bad = replace(trace, minus=M1.values[trace.in_idx] * np.linspace(0.5, 2.0, trace.plus.size))
    with pytest.raises(DiscretizationError):
        boundary_decomposition_residual(lambda v: 1.0 + np.tanh(v), bad, 0.5, M1, wall.c_M)


def test_extract_traces(M1, vgrid, slab):
    values = np.random.default_rng(0).normal(size=(8, vgrid.n))
    left, right = extract_traces(DistributionField(values, slab, vgrid))
    np.testing.assert_array_equal(left.plus, values[0, outgoing_indices(vgrid, -1)])
    np.testing.assert_array_equal(right.plus, values[-1, outgoing_indices(vgrid, 1)])
    with pytest.raises(GridError):
        left.full()


def test_torus_has_no_traces(vgrid):
    torus = build_spatial_grid(8, "torus")
    with pytest.raises(GridError):
        extract_traces(DistributionField(np.zeros((8, vgrid.n)), torus, vgrid))


def test_trace_frame(M1, slab):
    traces = [apply_reflection(_random_trace(w, M1, i), w.alpha, M1, w.c_M) for i, w in enumerate(slab.walls)]
    frame = trace_frame(traces)
    assert len(frame) == 2 * M1.grid.n
    assert set(frame["wall"]) == {"left", "right"}
    assert frame[["gamma_plus", "gamma_minus"]].notna().any(axis=1).all()


def test_discrete_cM_matches_truncated_continuum():
    s, vmax = 0.75, 1.0e3
    grid = build_velocity_grid(s, vmax=vmax, n=256)
    M = eval_M1(s, grid)
    # int_0^V v <v>^{-5/2} dv = 2 (1 - <V>^{-1/2})
    flux = M.mass_renorm * c_1s(s) * 2.0 * (1.0 - japanese(vmax) ** -0.5)
    for normal in (-1, 1):
        assert 1.0 / discrete_cM(M, grid, normal) == pytest.approx(flux, rel=1e-3)
