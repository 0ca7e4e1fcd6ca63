import numpy as np
import pytest

from heavytail_kinetics.collision import build_bgk, random_velocity_profiles
from heavytail_kinetics.errors import AdmissibilityError
from heavytail_kinetics.evolution import initial_field, project_zero_mass, random_fields, reflected_traces
from heavytail_kinetics.hyponorm import (DELTA_LADDER, HypoNorm, check_admissible, coercivity_functional,
                                        collision_flux_probe, hypo_inner, norm_equivalence, select_delta, triple_norm)


@pytest.fixture
def problem(make_problem):
    return make_problem(eps=0.5)


def test_inner_is_symmetric(problem):
    norm = HypoNorm.for_problem(problem, 0.25)
    f, g = random_fields(problem, 2, seed=11)
    assert hypo_inner(f, g, norm) == pytest.approx(hypo_inner(g, f, norm), rel=1e-12)
    assert norm.norm_sq(f) == pytest.approx(norm.inner(f, f), rel=1e-12)
    assert triple_norm(f, norm) ** 2 == pytest.approx(norm.norm_sq(f), rel=1e-12)


def test_zero_delta_is_h_norm(problem):
    norm = HypoNorm.for_problem(problem, 0.0)
    for f in random_fields(problem, 3, seed=1):
        assert norm.norm_sq(f) == norm.h_inner(f, f)
        assert norm.h_inner(f, f) == pytest.approx(1.0, rel=1e-12)


def test_cross_term_is_linear_in_delta(problem):
    f = random_fields(problem, 1, seed=2)[0]
    base = HypoNorm.for_problem(problem, 0.0).norm_sq(f)
    a = HypoNorm.for_problem(problem, 0.125).norm_sq(f) - base
    b = HypoNorm.for_problem(problem, 0.5).norm_sq(f) - base
    assert b == pytest.approx(4.0 * a, rel=1e-9, abs=1e-15)


def test_uniform_density_has_no_cross_term(problem):
    norm = HypoNorm.for_problem(problem, 1.0)
    g = random_velocity_profiles(problem.M, 1, seed=0)[0]
    uniform = np.outer(np.ones(problem.xgrid.nx), g)
    other = random_fields(problem, 1, seed=3)[0]
    assert abs(norm.cross(uniform, other)) < 1e-12


def test_select_delta_keeps_equivalence(make_problem):
    problems = [make_problem(eps=e) for e in (1.0, 0.5)]
    ensembles = [random_fields(p, 6, seed=0) for p in problems]
    choice = select_delta(problems, ensembles, coercive=False)
    assert choice.delta in DELTA_LADDER
    lo, hi = choice.equivalence
    assert 0.5 <= lo <= hi <= 1.5
    assert set(choice.cross_constants) == {1.0, 0.5}
    assert norm_equivalence(problems, ensembles, choice.delta) == pytest.approx((lo, hi), rel=1e-9)


def test_large_delta_breaks_equivalence(make_problem):
    problems = [make_problem(eps=e) for e in (1.0, 0.5)]
    ensembles = [random_fields(p, 6, seed=0) for p in problems]
    assert norm_equivalence(problems, ensembles, 0.0) == pytest.approx((1.0, 1.0))
    lo, hi = norm_equivalence(problems, ensembles, 1.0e4)
    assert lo < 0.5 or hi > 1.5


def test_h_part_of_generator_dissipates(problem):
    norm = HypoNorm.for_problem(problem, 0.0)
    for f in random_fields(problem, 4, seed=5):
        record = coercivity_functional(f, problem, norm)
        assert record.lhs <= 1e-12 * record.H_norm_sq
        assert record.lhs == pytest.approx(norm.h_inner(problem.generator(f.values), f.values), rel=1e-12)
        assert record.ratio >= -1e-12
        assert record.micro_sq > 0.0
        assert set(record.to_dict()) == {"eps", "delta", "lhs", "H_norm_sq", "triple_sq", "micro_sq", "ratio"}


def test_zero_field_ratio_is_nan(problem):
    zero = problem.field(np.zeros((problem.xgrid.nx, problem.vgrid.n)))
    record = coercivity_functional(zero, problem, HypoNorm.for_problem(problem, 0.1))
    assert record.lhs == 0.0
    assert np.isnan(record.ratio)


def test_equilibrium_is_not_admissible(problem):
    with pytest.raises(AdmissibilityError, match="mass"):
        coercivity_functional(problem.equilibrium_field(), problem, HypoNorm.for_problem(problem, 0.1))


def test_perturbed_walls_are_not_admissible(make_problem):
    problem = make_problem(cm_scale=1.01)
    f = random_fields(problem, 1, seed=0)[0]
    with pytest.raises(AdmissibilityError, match="flux"):
        coercivity_functional(f, problem, HypoNorm.for_problem(problem, 0.1))
    assert np.isfinite(coercivity_functional(f, problem, HypoNorm.for_problem(problem, 0.1), check=False).lhs)


@pytest.mark.parametrize("alphas", [(0.0, 0.0), (0.3, 1.0)])
def test_initial_data_is_admissible(alphas, make_problem):
    problem = make_problem(alpha_left=alphas[0], alpha_right=alphas[1])
    fields = random_fields(problem, 4, seed=6) + [initial_field(kind, problem) for kind in ("macro", "micro", "mixed")]
    for f in fields:
        check_admissible(f, problem)


def test_mismatched_incoming_values_are_not_admissible(make_problem):
    problem = make_problem(alpha_left=0.0, alpha_right=0.5)
    f = random_fields(problem, 1, seed=8)[0]
    values = f.values.copy()
    k = reflected_traces(f, problem.M)[0].in_idx[0]
    values[0, k] += 1e-3 * np.max(np.abs(values[0]))
    # removing the mass shifts both sides of the reflection by the same multiple of M
    values = project_zero_mass(values, problem)
    with pytest.raises(AdmissibilityError, match="incoming"):
        check_admissible(f.with_values(values), problem)


def test_bgk_flux_probe(M1, vgrid):
    probe = collision_flux_probe(build_bgk(M1, vgrid), M1, [0.5, 0.25, 0.125, 0.0625],
                                 random_velocity_profiles(M1, 10, seed=4))
    assert probe.eps == (0.0625, 0.125, 0.25, 0.5)
    assert probe.expected_floor == pytest.approx(M1.s - 1.0 - 0.15)
    assert probe.passed
