import numpy as np
import pytest

from heavytail_kinetics.collision import (assemble_collision, build_bgk, build_L1, build_L2, coercivity_ratios,
                                          collision_coercivity, levy_constant, levy_fp_generator,
                                          random_velocity_profiles)
from heavytail_kinetics.config import ModelConfig, NuSpec, SigmaSpec
from heavytail_kinetics.equilibria import build_velocity_grid, eval_M2
from heavytail_kinetics.errors import ConfigError, DiscretizationError


@pytest.fixture(scope="module")
def levy():
    grid = build_velocity_grid(0.75, vmax=1.0e3, n=128)
    M = eval_M2(0.75, grid)
    return M, build_L2(NuSpec(), 0.75, grid, 0.0, M, mass_defect_max=0.5)


def _mass_defect(A, w):
    return np.max(np.abs(w @ A.matrix)) / (np.max(np.abs(A.matrix)) * np.max(w))


def test_bgk_structure(M1, vgrid):
    A = build_bgk(M1, vgrid)
    assert _mass_defect(A, vgrid.weights) < 1e-14
    np.testing.assert_allclose(A.apply(M1.values), 0.0, atol=1e-15)
    ratios = coercivity_ratios(A, M1, random_velocity_profiles(M1, 10, seed=3))
    np.testing.assert_allclose(ratios, 1.0, rtol=1e-10)


@pytest.mark.parametrize("sigma", [SigmaSpec(), SigmaSpec("sin_x"), SigmaSpec("sin_x_gauss_v", 2.0)])
def test_boltzmann_structure(sigma, M1, vgrid):
    A = build_L1(sigma, M1, vgrid, x=0.3)
    w = vgrid.weights
    assert _mass_defect(A, w) < 1e-13
    AM = A.apply(M1.values)
    assert np.max(np.abs(AM)) < 1e-13 * np.max(np.abs(A.matrix)) * np.max(M1.values)
    # self-adjoint in L^2(M^{-1})
    sym = (w / M1.values)[:, None] * A.matrix
    np.testing.assert_allclose(sym, sym.T, rtol=0, atol=1e-12 * np.max(np.abs(sym)))
    lo, _ = sigma.bounds()
    assert collision_coercivity(A, M1, random_velocity_profiles(M1, 20, seed=1)) >= lo * (1 - 1e-10)


def test_constant_sigma_is_bgk(M1, vgrid):
    np.testing.assert_allclose(build_L1(SigmaSpec(), M1, vgrid, 0.0).matrix, build_bgk(M1, vgrid).matrix,
                               atol=1e-14)


def test_sigma_out_of_bounds_rejected(M1, vgrid):
    with pytest.raises(ConfigError):
        build_L1(SigmaSpec("sin_x", -1.0), M1, vgrid, 0.3)


def test_levy_constant_half():
    # C_{1,1/2} = 1/pi for the Cauchy jump kernel
    assert levy_constant(0.5) == pytest.approx(1.0 / np.pi, rel=1e-12)


def test_levy_generator_conserves_mass(levy):
    M, A = levy
    assert _mass_defect(A, M.grid.weights) < 1e-10


def test_levy_generator_annihilates_equilibrium(levy):
    M, A = levy
    assert np.linalg.norm(A.apply(M.values)) < 1e-8 * np.linalg.norm(A.matrix) * np.linalg.norm(M.values)


def test_levy_generator_dissipates_in_weighted_norm(levy):
    M, A = levy
    assert A.dissipation_defect <= 1e-8
    sym = (M.grid.weights / M.values)[:, None] * A.matrix
    top = np.linalg.eigvalsh(0.5 * (sym + sym.T))[-1]
    assert top <= 1e-8 * np.max(np.abs(sym))


def test_levy_generator_dissipates(levy):
    M, A = levy
    assert collision_coercivity(A, M, random_velocity_profiles(M, 20, seed=2)) > 0.0
    assert np.isfinite(A.raw_residual) and A.raw_residual >= 0.0
    assert 0.0 <= A.mass_defect <= 0.5


def test_levy_nu_scales_matrix(levy):
    M, A = levy
    B = build_L2(NuSpec("constant", 2.0), 0.75, M.grid, 0.0, M, mass_defect_max=0.5)
    np.testing.assert_allclose(B.matrix, 2.0 * A.matrix)


def test_levy_mass_defect_limit(levy):
    M, _ = levy
    with pytest.raises(DiscretizationError, match="mass-defect"):
        build_L2(NuSpec(), 0.75, M.grid, 0.0, M, mass_defect_max=0.0)


def test_assemble_shares_constant_kernels(M1, vgrid):
    centers = (np.arange(8) + 0.5) / 8
    bgk = assemble_collision(ModelConfig(operator_kind="bgk"), M1, vgrid, centers)
    assert len(bgk.cells) == 8 and len(bgk.groups) == 1
    varying = assemble_collision(ModelConfig(operator_kind="boltzmann", sigma=SigmaSpec("sin_x")), M1, vgrid, centers)
    assert len(varying.groups) == 8


def test_collision_set_applies_per_cell(M1, vgrid):
    centers = (np.arange(4) + 0.5) / 4
    ops = assemble_collision(ModelConfig(operator_kind="boltzmann", sigma=SigmaSpec("sin_x")), M1, vgrid, centers)
    values = np.random.default_rng(0).normal(size=(4, vgrid.n)) * M1.values
    out = ops.apply(values)
    for i, A in enumerate(ops.cells):
        np.testing.assert_allclose(out[i], A.apply(values[i]))


def test_random_profiles_shape(M1):
    g = random_velocity_profiles(M1, 5, seed=0)
    assert g.shape == (5, M1.grid.n)
    np.testing.assert_array_equal(g, random_velocity_profiles(M1, 5, seed=0))


def test_levy_raw_residual_on_512_nodes():
    grid = build_velocity_grid(0.75, vmax=1.0e3, n=512)
    _, diag = levy_fp_generator(0.75, grid, eval_M2(0.75, grid))
    assert diag.raw_residual <= 1e-3
    assert diag.mass_defect < 0.1


def test_levy_raw_residual_converges():
    residuals = []
    for n in (128, 256):
        grid = build_velocity_grid(0.75, vmax=1.0e3, n=n)
        residuals.append(levy_fp_generator(0.75, grid, eval_M2(0.75, grid))[1].raw_residual)
    assert residuals[1] < 0.5 * residuals[0]
