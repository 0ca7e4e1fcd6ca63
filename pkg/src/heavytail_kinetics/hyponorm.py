"""Modified scalar product mixing the H norm with a macroscopic cross term.

<<f, g>>_eps = <f, g>_H + eps delta <d_x (Id - d_xx)^{-1} rho_eps[f], J_eps[g]>
                      + eps delta <d_x (Id - d_xx)^{-1} rho_eps[g], J_eps[f]>
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .collision import CollisionMatrix
from .equilibria import DistributionField, Equilibrium, velocity_inner
from .errors import AdmissibilityError, DiscretizationError
from .geometry import wall_flux
from .macro import EllipticSolver, build_elliptic_solver, twisted_weights

logger = logging.getLogger(__name__)

DELTA_LADDER = tuple(2.0 ** -k for k in range(13))


def _values(f) -> np.ndarray:
    return f.values if isinstance(f, DistributionField) else np.asarray(f)


@dataclass(eq=False)
class HypoNorm:
    eps: float
    delta: float
    M: Equilibrium
    solver: EllipticSolver
    c_eps: float = field(init=False)

    def __post_init__(self):
        self.c_eps = self.M.c_eps(self.eps)
        self._rho_w, self._j_w = twisted_weights(self.M, self.eps)

    @classmethod
    def for_problem(cls, problem, delta: float) -> "HypoNorm":
        return cls(eps=problem.eps, delta=delta, M=problem.M, solver=build_elliptic_solver(problem.xgrid))

    def h_inner(self, f, g) -> float:
        local = velocity_inner(_values(f), _values(g), self.M)
        return float(np.sum(local) * self.solver.dx)

    def cross(self, f, g) -> float:
        """<d_x (Id - d_xx)^{-1} rho_eps[f], J_eps[g]>."""
        sol = self.solver.solve(_values(f) @ self._rho_w)
        return self.solver.inner(sol.grad, _values(g) @ self._j_w)

    def inner(self, f, g) -> float:
        return self.h_inner(f, g) + self.eps * self.delta * (self.cross(f, g) + self.cross(g, f))

    def norm_sq(self, f) -> float:
        return self.h_inner(f, f) + 2.0 * self.eps * self.delta * self.cross(f, f)


def hypo_inner(f, g, norm: HypoNorm) -> float:
    return norm.inner(f, g)


def triple_norm(f, norm: HypoNorm) -> float:
    return float(np.sqrt(max(norm.norm_sq(f), 0.0)))


@dataclass(frozen=True)
class CoercivityRecord:
    eps: float
    delta: float
    lhs: float
    H_norm_sq: float
    triple_sq: float
    micro_sq: float

    @property
    def rhs(self) -> float:
        """|||f|||^2 + eps^{-2s} ||f_perp||^2 with eps^{-2s} folded into ``micro_sq``."""
        return self.triple_sq + self.micro_sq

    @property
    def ratio(self) -> float:
        return -self.lhs / self.rhs if self.rhs > 0.0 else float("nan")

    def to_dict(self) -> Dict[str, float]:
        return {"eps": self.eps, "delta": self.delta, "lhs": self.lhs, "H_norm_sq": self.H_norm_sq,
                "triple_sq": self.triple_sq, "micro_sq": self.micro_sq, "ratio": self.ratio}


def check_admissible(f: DistributionField, problem, mass_tol: float = 1e-12, bc_tol: float = 1e-10,
                     flux_tol: float = 1e-10) -> None:
    """Zero global mass, incoming wall-cell values equal to the reflection of the outgoing ones,
    and zero net flux through each wall."""
    from .evolution import reflected_traces

    size = np.sqrt(max(velocity_inner(f.values, f.values, problem.M).sum() * f.xgrid.dx, 0.0))
    mass = problem.mass(f.values)
    if abs(mass) > mass_tol * max(size, 1.0):
        raise AdmissibilityError(f"field carries global mass {mass:.3e}")
    for trace, row in zip(reflected_traces(f, problem.M), (0, -1)):
        scale = np.sum(np.abs(trace.full() * f.vgrid.nodes * f.vgrid.weights))
        flux = wall_flux(trace)
        if abs(flux) > flux_tol * max(scale, 1e-300):
            raise AdmissibilityError(f"{trace.wall.name} wall flux {flux:.3e} violates the boundary condition")
        incoming = f.values[row, trace.in_idx]
        mismatch = float(np.max(np.abs(incoming - trace.minus)))
        if mismatch > bc_tol * max(np.max(np.abs(f.values[row])), 1e-300):
            raise AdmissibilityError(f"{trace.wall.name} wall: incoming values miss the Maxwell reflection "
                                     f"by {mismatch:.3e}")


def coercivity_functional(f: DistributionField, problem, norm: HypoNorm, check: bool = True) -> CoercivityRecord:
    """<<Lambda f, f>>_eps with the two sides of the coercivity estimate."""
    if check:
        check_admissible(f, problem)
    values = f.values
    lam = problem.generator(values)
    lhs = norm.h_inner(lam, values) + norm.eps * norm.delta * (norm.cross(lam, values) + norm.cross(values, lam))
    perp = f.perp(problem.M)
    return CoercivityRecord(eps=norm.eps, delta=norm.delta, lhs=float(lhs), H_norm_sq=norm.h_inner(values, values),
                            triple_sq=norm.norm_sq(values),
                            micro_sq=problem.collision_scale * norm.h_inner(perp, perp))


@dataclass(frozen=True)
class DeltaSelection:
    delta: float
    coercive: bool
    equivalence: Tuple[float, float]
    cross_constants: Dict[float, float]
    candidates: Tuple[float, ...] = DELTA_LADDER


def _cross_terms(problem, fields: Sequence[DistributionField], coercive: bool):
    norm = HypoNorm.for_problem(problem, 1.0)
    rows = []
    for f in fields:
        values = f.values
        H = norm.h_inner(values, values)
        X = 2.0 * norm.eps * norm.cross(values, values)
        if coercive:
            lam = problem.generator(values)
            Hl = norm.h_inner(lam, values)
            Y = norm.eps * (norm.cross(lam, values) + norm.cross(values, lam))
        else:
            Hl = Y = 0.0
        rows.append((H, X, Hl, Y))
    return np.array(rows)


def select_delta(problems: Sequence, ensembles: Sequence[Sequence[DistributionField]], coercive: bool = False,
                 ladder: Sequence[float] = DELTA_LADDER) -> DeltaSelection:
    """Largest delta on the ladder keeping |||f|||^2 within [1/2, 3/2] ||f||^2 for every field and eps.

    With ``coercive`` the modified form must also make <<Lambda f, f>> negative.
    Both quantities are affine in delta, so the cross terms are computed once.
    """
    terms = {p.eps: _cross_terms(p, fields, coercive) for p, fields in zip(problems, ensembles)}
    constants = {eps: float(np.max(np.abs(t[:, 1]) / t[:, 0]) / eps ** problems[0].s)
                 for eps, t in terms.items()}
    for delta in sorted(ladder, reverse=True):
        ok = True
        lo, hi = np.inf, -np.inf
        for t in terms.values():
            ratio = 1.0 + delta * t[:, 1] / t[:, 0]
            lo, hi = min(lo, ratio.min()), max(hi, ratio.max())
            if coercive:
                ok &= bool(np.all(t[:, 2] + delta * t[:, 3] < 0.0))
        ok &= lo >= 0.5 and hi <= 1.5
        if ok:
            logger.info("selected delta=%g (norm ratio in [%.3f, %.3f])", delta, lo, hi)
            return DeltaSelection(delta=delta, coercive=coercive, equivalence=(float(lo), float(hi)),
                                  cross_constants=constants, candidates=tuple(ladder))
    raise DiscretizationError(f"no delta in {tuple(ladder)} satisfies the norm equivalence"
                              + (" and coercivity" if coercive else ""))


def norm_equivalence(problems: Sequence, ensembles: Sequence[Sequence[DistributionField]], delta: float) -> Tuple[float, float]:
    """Range of |||f|||^2 / ||f||^2 over the ensembles for a fixed delta."""
    ratios = []
    for problem, fields in zip(problems, ensembles):
        norm = HypoNorm.for_problem(problem, delta)
        ratios.extend(norm.norm_sq(f) / norm.h_inner(f, f) for f in fields)
    return float(min(ratios)), float(max(ratios))


@dataclass(frozen=True)
class FluxProbe:
    eps: Tuple[float, ...]
    sizes: Tuple[float, ...]
    exponent: float
    expected_floor: float

    @property
    def passed(self) -> bool:
        return self.exponent >= self.expected_floor


def collision_flux_probe(A: CollisionMatrix, M: Equilibrium, eps_list: Sequence[float], ensemble: np.ndarray,
                         tol: float = 0.15) -> FluxProbe:
    """sup |J_eps[A g]| / ||g_perp||_H over the ensemble, and its eps exponent (at least s - 1)."""
    g = np.atleast_2d(ensemble)
    w = M.grid.weights
    perp = g - np.outer(g @ w, M.values)
    size = np.sqrt((perp * perp / M.values) @ w)
    Ag = A.apply(g)
    eps = tuple(sorted(float(e) for e in eps_list))
    sizes: List[float] = []
    for e in eps:
        _, jw = twisted_weights(M, e)
        sizes.append(float(np.max(np.abs(Ag @ jw) / size)))
    slope = float(np.polyfit(np.log(eps), np.log(sizes), 1)[0])
    return FluxProbe(eps=eps, sizes=tuple(sizes), exponent=slope, expected_floor=M.s - 1.0 - tol)
