"""Spatial grid, wall traces and the Maxwell reflection operator.

In one space dimension the boundary of the slab is two points: x = 0 with outward
normal -1 and x = 1 with outward normal +1. The reflection map is v -> -v, realized
node-exactly by the velocity grid pairing.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .equilibria import DistributionField, Equilibrium, VelocityGrid
from .errors import ConfigError, DiscretizationError, GridError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Wall:
    name: str
    normal: int
    alpha: float
    c_M: float = 0.0


@dataclass(frozen=True, eq=False)
class SpatialGrid:
    geometry: str
    nx: int
    length: float = 1.0
    walls: Tuple[Wall, ...] = ()

    def __post_init__(self):
        if self.nx < 2 or self.length <= 0.0:
            raise GridError(f"degenerate spatial grid (nx={self.nx}, length={self.length})")
        if self.geometry == "slab" and len(self.walls) != 2:
            raise GridError("slab geometry needs a left and a right wall")
        if self.geometry == "torus" and self.walls:
            raise GridError("torus geometry has no walls")

    @property
    def dx(self) -> float:
        return self.length / self.nx

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.dx

    @property
    def periodic(self) -> bool:
        return self.geometry == "torus"

    def integrate(self, values) -> np.ndarray:
        """Midpoint rule over the first axis."""
        return np.sum(values, axis=0) * self.dx

    def with_walls(self, walls: Tuple[Wall, ...]) -> "SpatialGrid":
        return replace(self, walls=walls)


def build_spatial_grid(nx: int, geometry: str = "slab", alpha_left: float = 0.0,
                       alpha_right: float = 0.0, length: float = 1.0) -> SpatialGrid:
    if geometry == "torus":
        return SpatialGrid(geometry="torus", nx=nx, length=length)
    if geometry != "slab":
        raise ConfigError(f"unknown geometry '{geometry}'")
    for alpha in (alpha_left, alpha_right):
        if not 0.0 <= alpha <= 1.0:
            raise ConfigError(f"accommodation coefficient {alpha} outside [0, 1]")
    walls = (Wall("left", -1, float(alpha_left)), Wall("right", +1, float(alpha_right)))
    return SpatialGrid(geometry="slab", nx=nx, length=length, walls=walls)


def outgoing_indices(grid: VelocityGrid, normal: int) -> np.ndarray:
    """Nodes with v . n > 0; a v = 0 node belongs to neither half."""
    return np.flatnonzero(grid.nodes * normal > 0.0)


def discrete_cM(M: Equilibrium, grid: VelocityGrid, normal: int, s: Optional[float] = None,
                alpha: Optional[float] = None) -> float:
    """1 / sum_{v.n>0} M(v) (v.n) w, so that c_M Mbar = 1 holds on the grid."""
    if s is not None and alpha is not None and alpha != 0.0 and s <= 0.5:
        raise ConfigError(f"diffusive reflection needs s > 1/2 (got s={s}, alpha={alpha})")
    out = outgoing_indices(grid, normal)
    mbar = float(np.sum(M.values[out] * grid.nodes[out] * normal * grid.weights[out]))
    if mbar <= 0.0:
        raise DiscretizationError("half-grid flux of the equilibrium is not positive")
    return 1.0 / mbar


def attach_walls(xgrid: SpatialGrid, M: Equilibrium, s: float, cm_scale: float = 1.0) -> SpatialGrid:
    """Fill in the discrete c_M of every wall; ``cm_scale`` perturbs it for fault injection."""
    if xgrid.periodic:
        return xgrid
    walls = []
    for wall in xgrid.walls:
        c_M = discrete_cM(M, M.grid, wall.normal, s, wall.alpha) if wall.alpha > 0.0 or s > 0.5 else 0.0
        walls.append(replace(wall, c_M=cm_scale * c_M))
    return xgrid.with_walls(tuple(walls))


@dataclass(frozen=True, eq=False)
class TraceData:
    """Outgoing and (optionally) incoming half-traces at one wall."""

    wall: Wall
    grid: VelocityGrid
    plus: np.ndarray
    minus: Optional[np.ndarray] = None

    @property
    def out_idx(self) -> np.ndarray:
        return outgoing_indices(self.grid, self.wall.normal)

    @property
    def in_idx(self) -> np.ndarray:
        """Incoming nodes, ordered as the mirror images of ``out_idx``."""
        return self.grid.pairing[self.out_idx]

    @property
    def flux_weights(self) -> np.ndarray:
        """(v.n) w on the outgoing half."""
        out = self.out_idx
        return self.grid.nodes[out] * self.wall.normal * self.grid.weights[out]

    def full(self) -> np.ndarray:
        """gamma f on the whole grid: plus on outgoing nodes, minus on incoming ones."""
        if self.minus is None:
            raise GridError("incoming trace not computed")
        out = np.zeros(self.grid.n)
        out[self.out_idx] = self.plus
        out[self.in_idx] = self.minus
        return out


def extract_traces(f: DistributionField) -> Tuple[TraceData, TraceData]:
    """Upwind wall values: outgoing traces are the boundary cell values."""
    xgrid, vgrid = f.xgrid, f.vgrid
    if xgrid.periodic:
        raise GridError("the torus has no boundary traces")
    left, right = xgrid.walls
    return (TraceData(left, vgrid, f.values[0, outgoing_indices(vgrid, left.normal)]),
            TraceData(right, vgrid, f.values[-1, outgoing_indices(vgrid, right.normal)]))


def outgoing_flux(trace: TraceData) -> float:
    """fbar_+ = sum_{v.n>0} gamma_+ f (v.n) w."""
    return float(trace.plus @ trace.flux_weights)


def apply_reflection(trace: TraceData, alpha: float, M: Equilibrium, c_M: float) -> TraceData:
    """Maxwell condition: gamma_- f(v) = (1-alpha) gamma_+ f(-v) + alpha c_M M(v) fbar_+."""
    if not trace.grid.same_as(M.grid):
        raise GridError("trace and equilibrium grids differ")
    diffuse = c_M * M.values[trace.in_idx] * outgoing_flux(trace)
    return replace(trace, minus=(1.0 - alpha) * trace.plus + alpha * diffuse)


def D_op(trace: TraceData, M: Equilibrium, c_M: float) -> np.ndarray:
    """Diffusive part c_M M fbar_+ on the outgoing half."""
    return c_M * M.values[trace.out_idx] * outgoing_flux(trace)


def D_perp(trace: TraceData, M: Equilibrium, c_M: float) -> TraceData:
    return replace(trace, plus=trace.plus - D_op(trace, M, c_M), minus=None)


def boundary_inner(a: TraceData, b: TraceData, M: Equilibrium) -> float:
    """Pairing in L^2(Sigma_+; M^{-1} (v.n) dv) at one wall."""
    return float(np.sum(a.plus * b.plus / M.values[a.out_idx] * a.flux_weights))


def boundary_norm(traces: Iterable[TraceData], M: Equilibrium,
                  weight: Optional[Callable[[Wall], float]] = None) -> float:
    """Norm of the outgoing traces summed over all boundary points."""
    total = 0.0
    for trace in traces:
        factor = 1.0 if weight is None else weight(trace.wall)
        total += factor * boundary_inner(trace, trace, M)
    return float(np.sqrt(max(total, 0.0)))


def boundary_dissipation(traces: Sequence[TraceData], M: Equilibrium) -> float:
    """sum over walls of alpha (2 - alpha) ||D_perp gamma_+ f||^2."""
    parts = [D_perp(t, M, t.wall.c_M) for t in traces]
    return boundary_norm(parts, M, weight=lambda wall: wall.alpha * (2.0 - wall.alpha)) ** 2


def wall_flux(trace: TraceData) -> float:
    """sum_k gamma f(v_k) (v_k . n) w_k over the whole grid."""
    grid = trace.grid
    return float(np.sum(trace.full() * grid.nodes * trace.wall.normal * grid.weights))


def boundary_decomposition_residual(phi: Callable[[np.ndarray], np.ndarray], trace: TraceData, alpha: float,
                     M: Equilibrium, c_M: float, tol: float = 1e-10) -> float:
    """|LHS - RHS| of the boundary decomposition of the flux of phi gamma g.

    LHS is the full-grid flux of phi gamma g; the three right-hand terms live on the
    outgoing half. Raises when the relative residual exceeds ``tol``.
    """
    grid = trace.grid
    v = grid.nodes
    lhs = float(np.sum(phi(v) * trace.full() * v * trace.wall.normal * grid.weights))
    out = trace.out_idx
    mu = trace.flux_weights
    dplus = D_op(trace, M, c_M)
    dperp = trace.plus - dplus
    jump = phi(v[out]) - phi(-v[out])
    rhs = float(np.sum((alpha * phi(v[out]) * dperp + jump * (1.0 - alpha) * dperp + jump * dplus) * mu))
    scale = float(np.sum(np.abs(phi(v) * trace.full() * v * grid.weights))) + abs(lhs) + 1e-300
    residual = abs(lhs - rhs)
    if residual > tol * max(scale, 1.0):
        raise DiscretizationError(f"boundary decomposition residual {residual:.3e} (trace violates reflection)")
    return residual


def trace_frame(traces: Sequence[TraceData]) -> pd.DataFrame:
    frames = []
    for t in traces:
        plus = np.full(t.grid.n, np.nan)
        minus = np.full(t.grid.n, np.nan)
        plus[t.out_idx] = t.plus
        if t.minus is not None:
            minus[t.in_idx] = t.minus
        frames.append(pd.DataFrame({"wall": t.wall.name, "v": t.grid.nodes,
                                    "gamma_plus": plus, "gamma_minus": minus}))
    return pd.concat(frames, ignore_index=True)
