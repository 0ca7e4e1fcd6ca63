"""Discrete generator and time stepping.

Lambda_eps f = -eps^{1-2s} v d_x f + eps^{-2s} L f, with Maxwell reflection at the slab
walls or periodic closure on the torus. A step is Lie splitting: transport (implicit
upwind by default, explicit upwind under CFL) followed by a per-cell implicit collision
solve (I - dt eps^{-2s} A_x) f = f~.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg
from tqdm import tqdm

from .collision import CollisionSet, assemble_collision
from .config import ModelConfig, SimConfig
from .equilibria import (DistributionField, Equilibrium, VelocityGrid, build_velocity_grid, eval_M1, eval_M2,
                         japanese, weighted_inner_H, weighted_norm_H)
from .errors import CFLError, DiscretizationError
from .geometry import (SpatialGrid, TraceData, apply_reflection, attach_walls, boundary_dissipation,
                       build_spatial_grid, extract_traces, outgoing_indices)

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class Problem:
    """Everything needed to apply Lambda_eps: grids, equilibrium, walls, collision matrices."""

    model: ModelConfig
    sim: SimConfig
    vgrid: VelocityGrid
    xgrid: SpatialGrid
    M: Equilibrium
    collision: CollisionSet
    _factors: Dict[tuple, object] = field(default_factory=dict, init=False, repr=False)

    @property
    def eps(self) -> float:
        return self.model.eps

    @property
    def s(self) -> float:
        return self.model.s

    @property
    def transport_scale(self) -> float:
        return self.eps ** (1.0 - 2.0 * self.s)

    @property
    def collision_scale(self) -> float:
        return self.eps ** (-2.0 * self.s)

    def field(self, values: np.ndarray) -> DistributionField:
        return DistributionField(values=values, xgrid=self.xgrid, vgrid=self.vgrid)

    def transport(self, values: np.ndarray) -> np.ndarray:
        return apply_transport(self.field(values), self.eps, self.M).increment

    def generator(self, values: np.ndarray) -> np.ndarray:
        """Lambda_eps f."""
        return self.transport(values) + self.collision_scale * self.collision.apply(values)

    def mass(self, values: np.ndarray) -> float:
        return float(self.xgrid.integrate(values @ self.vgrid.weights))

    def equilibrium_field(self) -> DistributionField:
        return self.field(np.tile(self.M.values, (self.xgrid.nx, 1)))


def build_equilibrium(model: ModelConfig, sim: SimConfig, vgrid: Optional[VelocityGrid] = None) -> Equilibrium:
    """M2 for the Levy-Fokker-Planck operator, M1 otherwise."""
    if vgrid is None:
        vgrid = build_velocity_grid(model.s, sim.vmax, sim.nv, sim.grading)
    return eval_M2(model.s, vgrid) if model.operator_kind == "levy_fp" else eval_M1(model.s, vgrid)


def build_problem(model: ModelConfig, sim: SimConfig, cm_scale: float = 1.0,
                  xgrid: Optional[SpatialGrid] = None, vgrid: Optional[VelocityGrid] = None) -> Problem:
    model.validate()
    sim.validate()
    M = build_equilibrium(model, sim, vgrid)
    vgrid = M.grid
    if xgrid is None:
        xgrid = build_spatial_grid(sim.nx, model.geometry, model.alpha_left, model.alpha_right)
    xgrid = attach_walls(xgrid, M, model.s, cm_scale)
    ops = assemble_collision(model, M, vgrid, xgrid.centers, sim.mass_defect_max)
    logger.info("assembled %s problem: s=%.3f eps=%.4g %s nx=%d nv=%d", model.operator_kind, model.s,
                model.eps, xgrid.geometry, xgrid.nx, vgrid.n)
    return Problem(model=model, sim=sim, vgrid=vgrid, xgrid=xgrid, M=M, collision=ops)


@dataclass(frozen=True)
class TransportResult:
    increment: np.ndarray
    traces: Tuple[TraceData, ...]


def reflected_traces(f: DistributionField, M: Equilibrium) -> Tuple[TraceData, ...]:
    """Outgoing wall traces of f with the incoming halves filled by the Maxwell condition."""
    if f.xgrid.periodic:
        return ()
    return tuple(apply_reflection(t, t.wall.alpha, M, t.wall.c_M) for t in extract_traces(f))


def apply_transport(f: DistributionField, eps: float, M: Equilibrium, dt: Optional[float] = None) -> TransportResult:
    """-eps^{1-2s} d_x (v f), first-order upwind; checks the CFL condition when ``dt`` is given."""
    xgrid, vgrid = f.xgrid, f.vgrid
    speed = eps ** (1.0 - 2.0 * M.s) * vgrid.nodes
    if dt is not None:
        cfl = dt * np.max(np.abs(speed)) / xgrid.dx
        if cfl > 1.0:
            raise CFLError(f"explicit transport CFL number {cfl:.3g} > 1 (dt={dt:g}, eps={eps:g})")
    F = f.values
    traces = reflected_traces(f, M)
    if xgrid.periodic:
        left_ghost, right_ghost = F[-1], F[0]
    else:
        left, right = traces
        left_ghost, right_ghost = F[0].copy(), F[-1].copy()
        left_ghost[left.in_idx] = left.minus
        right_ghost[right.in_idx] = right.minus
    padded = np.vstack([left_ghost, F, right_ghost])
    flux = speed * np.where(speed > 0.0, padded[:-1], padded[1:])
    return TransportResult(increment=-(flux[1:] - flux[:-1]) / xgrid.dx, traces=traces)


def _slab_factor(problem: Problem, dt: float):
    key = ("slab", dt)
    if key not in problem._factors:
        vgrid, M = problem.vgrid, problem.M
        pos = vgrid.positive
        c = dt * problem.transport_scale * vgrid.nodes[pos] / problem.xgrid.dx
        R = (c / (1.0 + c)) ** problem.xgrid.nx
        mu = vgrid.nodes[pos] * vgrid.weights[pos]
        left, right = problem.xgrid.walls
        S = [(1.0 - w.alpha) * np.eye(pos.size) + w.alpha * w.c_M * np.outer(M.values[pos], mu)
             for w in (left, right)]
        system = np.eye(pos.size) - S[0] @ (R[:, None] * S[1]) * R[None, :]
        problem._factors[key] = (c, R, S[0], S[1], linalg.lu_factor(system))
    return problem._factors[key]


def _sweep(src: np.ndarray, c: np.ndarray, inflow: np.ndarray, reverse: bool) -> np.ndarray:
    out = np.empty_like(src)
    prev = inflow
    order = range(src.shape[0] - 1, -1, -1) if reverse else range(src.shape[0])
    for i in order:
        prev = (src[i] + c * prev) / (1.0 + c)
        out[i] = prev
    return out


def implicit_transport(values: np.ndarray, problem: Problem, dt: float) -> np.ndarray:
    """Solve (I - dt T) f = values with upwind T and the wall closure of the problem."""
    vgrid = problem.vgrid
    if problem.xgrid.periodic:
        nx = problem.xgrid.nx
        c = dt * problem.transport_scale * np.abs(vgrid.nodes) / problem.xgrid.dx
        theta = 2.0 * np.pi * np.fft.fftfreq(nx)
        phase = np.where(vgrid.nodes[None, :] > 0.0, np.exp(-1j * theta)[:, None], np.exp(1j * theta)[:, None])
        denom = 1.0 + c[None, :] * (1.0 - phase)
        return np.real(np.fft.ifft(np.fft.fft(values, axis=0) / denom, axis=0))

    pos = vgrid.positive
    neg = vgrid.pairing[pos]
    c, R, S_left, S_right, lu = _slab_factor(problem, dt)
    zero = np.zeros(pos.size)
    out_right = _sweep(values[:, pos], c, zero, reverse=False)[-1]
    out_left = _sweep(values[:, neg], c, zero, reverse=True)[0]
    a = linalg.lu_solve(lu, S_left @ (out_left + R * (S_right @ out_right)))
    b = S_right @ (out_right + R * a)
    f = np.empty_like(values)
    f[:, pos] = _sweep(values[:, pos], c, a, reverse=False)
    f[:, neg] = _sweep(values[:, neg], c, b, reverse=True)
    return f


def implicit_collision(values: np.ndarray, problem: Problem, dt: float) -> np.ndarray:
    tau = dt * problem.collision_scale
    out = np.empty_like(values)
    for A, idx in problem.collision.groups:
        key = ("collision", id(A), dt)
        if key not in problem._factors:
            problem._factors[key] = (A, linalg.lu_factor(np.eye(A.grid.n) - tau * A.matrix))
        lu = problem._factors[key][1]
        out[idx] = linalg.lu_solve(lu, values[idx].T).T
    return out


@dataclass(frozen=True)
class SimState:
    f: DistributionField
    t: float
    problem: Problem
    conserved_mass: float

    @property
    def cfg(self) -> ModelConfig:
        return self.problem.model


def initial_state(problem: Problem, values: np.ndarray) -> SimState:
    return SimState(f=problem.field(values), t=0.0, problem=problem, conserved_mass=problem.mass(values))


def step(state: SimState, dt: float) -> SimState:
    problem = state.problem
    values = state.f.values
    if problem.sim.transport == "explicit":
        transported = values + dt * apply_transport(state.f, problem.eps, problem.M, dt).increment
    else:
        transported = implicit_transport(values, problem, dt)
    collided = implicit_collision(transported, problem, dt)
    if not np.all(np.isfinite(collided)):
        raise DiscretizationError(f"non-finite values after step at t={state.t:g}")
    return SimState(f=state.f.with_values(collided), t=state.t + dt, problem=problem,
                    conserved_mass=state.conserved_mass)


SERIES_COLUMNS = ["t", "H_norm", "triple_norm", "micro_norm", "mass", "boundary_diss"]


def _record(state: SimState, norm) -> dict:
    problem = state.problem
    f = state.f
    perp = f.with_values(f.perp(problem.M))
    traces = reflected_traces(f, problem.M)
    diss = 0.5 * problem.transport_scale * boundary_dissipation(traces, problem.M) if traces else 0.0
    triple = np.sqrt(max(norm.norm_sq(f), 0.0)) if norm is not None else np.nan
    return {"t": state.t, "H_norm": weighted_norm_H(f, problem.M), "triple_norm": triple,
            "micro_norm": weighted_norm_H(perp, problem.M), "mass": f.mass(), "boundary_diss": diss}


def evolve_and_record(state: SimState, T: float, dt: float, record_every: int = 10,
                      delta: Optional[float] = None, progress: bool = False) -> pd.DataFrame:
    """Advance to time T and return the recorded series (one row per ``record_every`` steps)."""
    from .hyponorm import HypoNorm

    problem = state.problem
    delta = problem.model.delta if delta is None else delta
    norm = HypoNorm.for_problem(problem, delta) if delta is not None else None
    n_steps = int(round(T / dt))
    rows = [_record(state, norm)]
    for k in tqdm(range(1, n_steps + 1), desc=f"eps={problem.eps:g}", disable=not progress, leave=False):
        state = step(state, dt)
        if k % record_every == 0 or k == n_steps:
            rows.append(_record(state, norm))
    return pd.DataFrame(rows, columns=SERIES_COLUMNS)


# initial data


def project_zero_mass(values: np.ndarray, problem: Problem) -> np.ndarray:
    """Remove the global mass by subtracting a multiple of M uniformly in x."""
    length = problem.xgrid.length
    return values - problem.mass(values) / length * problem.M.values[None, :]


def impose_wall_condition(values: np.ndarray, problem: Problem) -> np.ndarray:
    """Overwrite the incoming half of each wall cell by the Maxwell reflection of its outgoing half.

    Commutes with adding multiples of M, which the reflection maps to itself.
    """
    if problem.xgrid.periodic:
        return values
    out = np.array(values, dtype=float)
    for trace, row in zip(extract_traces(problem.field(out)), (0, -1)):
        reflected = apply_reflection(trace, trace.wall.alpha, problem.M, trace.wall.c_M)
        out[row, reflected.in_idx] = reflected.minus
    return out


def _macro_profile(problem: Problem) -> np.ndarray:
    x = problem.xgrid.centers / problem.xgrid.length
    return np.cos(2 * np.pi * x) if problem.xgrid.periodic else np.cos(np.pi * x)


def _normalized(problem: Problem, values: np.ndarray) -> np.ndarray:
    values = project_zero_mass(impose_wall_condition(values, problem), problem)
    size = weighted_norm_H(problem.field(values), problem.M)
    return values / size if size > 0.0 else values


def initial_field(kind: str, problem: Problem, seed: int = 0) -> DistributionField:
    """Zero-mass initial data of unit H norm: macro, micro, mixed or random."""
    M, v = problem.M.values, problem.vgrid.nodes
    x = problem.xgrid.centers / problem.xgrid.length
    t = v / japanese(v)
    macro = np.outer(_macro_profile(problem), M)
    micro = np.outer(1.0 + 0.5 * np.cos(2 * np.pi * x), M * t)
    if kind == "macro":
        values = macro
    elif kind == "micro":
        values = micro
    elif kind == "mixed":
        values = macro + micro
    elif kind == "random":
        values = random_fields(problem, 1, seed)[0].values
    else:
        raise ValueError(f"unknown initial data kind '{kind}'")
    return problem.field(_normalized(problem, values))


def _spatial_modes(problem: Problem, count: int) -> np.ndarray:
    x = problem.xgrid.centers / problem.xgrid.length
    if problem.xgrid.periodic:
        modes = [np.cos(2 * np.pi * k * x) for k in range(count)] + [np.sin(2 * np.pi * k * x) for k in range(1, count)]
    else:
        modes = [np.cos(np.pi * k * x) for k in range(2 * count - 1)]
    return np.stack(modes)


def _micro_basis(problem: Problem) -> np.ndarray:
    M, v, w = problem.M.values, problem.vgrid.nodes, problem.vgrid.weights
    t = v / japanese(v)
    even = np.stack([t * t, np.cos(v)])
    even = even - (even * M) @ w[:, None] * np.ones_like(v)[None, :]
    return M * np.vstack([t, t ** 3, even])


def random_fields(problem: Problem, size: int, seed: int = 0) -> List[DistributionField]:
    """Zero-mass random fields spanning macro-, micro-dominated and flux-aligned cases."""
    rng = np.random.default_rng(seed)
    modes = _spatial_modes(problem, 4)
    basis = _micro_basis(problem)
    M = problem.M.values
    out = []
    for i in range(size):
        rho = rng.normal(size=modes.shape[0]) @ modes
        micro = (rng.normal(size=(basis.shape[0], modes.shape[0])) @ modes).T @ basis
        kind = i % 4
        if kind == 0:
            values = np.outer(rho, M)
        elif kind == 1:
            values = micro
        elif kind == 2:
            values = np.outer(rho, M) + rng.uniform(0.1, 3.0) * micro
        else:
            aligned = -np.gradient(rho, problem.xgrid.dx)
            aligned = aligned / max(np.max(np.abs(aligned)), 1e-300)
            values = np.outer(rho, M) + rng.uniform(0.5, 2.0) * np.outer(aligned, basis[0])
        out.append(problem.field(_normalized(problem, values)))
    return out


# transport dissipation


@dataclass(frozen=True)
class DissipationBalance:
    transport: float
    boundary: float

    @property
    def defect(self) -> float:
        return self.transport + self.boundary


def dissipation_identity(f: DistributionField, problem: Problem) -> DissipationBalance:
    """Transport part of <Lambda f, f>_H and the wall dissipation it should cancel."""
    result = apply_transport(f, problem.eps, problem.M)
    transport = weighted_inner_H(f.with_values(result.increment), f, problem.M)
    boundary = 0.5 * problem.transport_scale * boundary_dissipation(result.traces, problem.M) if result.traces else 0.0
    return DissipationBalance(transport=transport, boundary=boundary)


def admissible_profile(problem: Problem) -> Callable[[Sequence[float]], np.ndarray]:
    """Smooth f(x, v) whose values at x = 0 and x = L satisfy the Maxwell condition exactly."""
    M, v = problem.M.values, problem.vgrid.nodes
    t = v / japanese(v)
    L = problem.xgrid.length

    def smooth(x):
        x = np.asarray(x, dtype=float)[:, None] / L
        if problem.xgrid.periodic:
            return M * (np.cos(2 * np.pi * x) * (1 + 0.5 * t) + 0.5 * np.sin(2 * np.pi * x) * t * t)
        return M * (np.cos(np.pi * x) * (1 + 0.5 * t) + 0.5 * x * t * t)

    if problem.xgrid.periodic:
        return smooth
    corrections = []
    for wall, x_wall in zip(problem.xgrid.walls, (0.0, L)):
        at_wall = smooth([x_wall])
        trace = TraceData(wall, problem.vgrid, at_wall[0, outgoing_indices(problem.vgrid, wall.normal)])
        reflected = apply_reflection(trace, wall.alpha, problem.M, wall.c_M)
        fix = np.zeros(v.size)
        fix[reflected.in_idx] = reflected.minus - at_wall[0, reflected.in_idx]
        corrections.append(fix)

    def profile(x):
        x = np.asarray(x, dtype=float)
        return smooth(x) + np.outer((1 - x / L) ** 2, corrections[0]) + np.outer((x / L) ** 2, corrections[1])

    return profile


def admissible_smooth_field(problem: Problem) -> DistributionField:
    """The admissible profile sampled at the cell centres."""
    return problem.field(admissible_profile(problem)(problem.xgrid.centers))
