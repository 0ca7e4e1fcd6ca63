"""Velocity grid, heavy-tailed equilibria and the weighted Hilbert space.

The velocity grid is a symmetric finite-volume partition of [-vmax, vmax]:
nodes are mapped cell midpoints and weights are cell widths. The grid is graded
so that both the core |v| ~ 1 and the power-law tail up to vmax are resolved,
and the sign reflection v -> -v maps node k onto node n-1-k exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import TYPE_CHECKING, Iterable, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import integrate, special

from .errors import DiscretizationError, GridError

if TYPE_CHECKING:
    from .geometry import SpatialGrid

logger = logging.getLogger(__name__)

# |v| beyond which the stable density is summed from its power-law series
SERIES_SWITCH = 30.0
POWER_GRADING_EXPONENT = 3.0


def japanese(v, eps: float = 1.0):
    """<eps v> = sqrt(1 + (eps v)^2)."""
    v = np.asarray(v, dtype=float)
    return np.sqrt(1.0 + (eps * v) ** 2)


@dataclass(frozen=True, eq=False)
class VelocityGrid:
    nodes: np.ndarray
    weights: np.ndarray
    edges: np.ndarray
    vmax: float
    grading: str

    def __post_init__(self):
        for arr in (self.nodes, self.weights, self.edges):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.nodes.size

    @property
    def pairing(self) -> np.ndarray:
        """Index of the node carrying -v."""
        return np.arange(self.n)[::-1]

    @property
    def positive(self) -> np.ndarray:
        return np.flatnonzero(self.nodes > 0.0)

    @property
    def negative(self) -> np.ndarray:
        return np.flatnonzero(self.nodes < 0.0)

    def same_as(self, other: "VelocityGrid") -> bool:
        return self is other or (self.n == other.n and np.array_equal(self.nodes, other.nodes)
                                 and np.array_equal(self.weights, other.weights))

    def integrate(self, values) -> np.ndarray:
        """Quadrature over the last axis."""
        return np.asarray(values) @ self.weights


def _half_edges(vmax: float, half: int, grading: str, scale: float) -> Tuple[np.ndarray, np.ndarray]:
    xi = np.linspace(0.0, 1.0, half + 1)
    mid = 0.5 * (xi[1:] + xi[:-1])
    if grading == "geometric":
        ratio = 1.0 + vmax / scale
        edge_map = lambda t: scale * np.expm1(t * np.log(ratio))
    elif grading == "power":
        edge_map = lambda t: vmax * t ** POWER_GRADING_EXPONENT
    else:
        raise GridError(f"unknown grading '{grading}'")
    edges = edge_map(xi)
    edges[-1] = vmax
    return edges, edge_map(mid)


def build_velocity_grid(s: float, vmax: float = 1.0e3, n: int = 256, grading: str = "geometric",
                        scale: float = 1.0, eps_check: Optional[Iterable[float]] = None,
                        rtol: float = 1.0e-3) -> VelocityGrid:
    """Build the symmetric graded grid.

    With ``eps_check`` the quadrature of <v>^{-1-2s} and of <v>^{-1-2s} v^2/<eps v>^2 is
    compared with the truncated continuum integrals and a GridError is raised when the
    relative error exceeds ``rtol``.
    """
    if n < 4 or n % 2:
        raise GridError(f"velocity grid needs an even number of nodes >= 4, got {n}")
    if vmax <= 1.0:
        raise GridError(f"vmax must exceed 1, got {vmax}")
    if not 0.0 < s <= 1.0:
        raise GridError(f"s must lie in (0, 1], got {s}")

    half_edges, half_nodes = _half_edges(vmax, n // 2, grading, scale)
    edges = np.concatenate([-half_edges[::-1], half_edges[1:]])
    nodes = np.concatenate([-half_nodes[::-1], half_nodes])
    widths = np.diff(half_edges)
    weights = np.concatenate([widths[::-1], widths])
    grid = VelocityGrid(nodes=nodes, weights=weights, edges=edges, vmax=float(vmax), grading=grading)

    if eps_check is not None:
        errors = grid_quadrature_errors(grid, s, eps_check)
        worst = max(errors.values())
        if worst > rtol:
            raise GridError(f"velocity quadrature error {worst:.2e} exceeds {rtol:.1e} "
                            f"(n={n}, vmax={vmax}, grading={grading})")
        logger.debug("velocity grid quadrature errors: %s", errors)
    return grid


def truncated_tail_integral(s: float, vmax: float) -> float:
    """Integral of <v>^{-1-2s} over [-vmax, vmax]."""
    a = 0.5 + s
    return float(2.0 * vmax * special.hyp2f1(0.5, a, 1.5, -vmax * vmax))


def grid_quadrature_errors(grid: VelocityGrid, s: float, eps_list: Iterable[float]) -> dict:
    """Relative quadrature errors against adaptive integration on [0, vmax]."""
    base = lambda v: japanese(v) ** (-1.0 - 2.0 * s)
    out = {"mass": abs(grid.integrate(base(grid.nodes)) / truncated_tail_integral(s, grid.vmax) - 1.0)}
    for eps in eps_list:
        weighted = lambda v, e=eps: base(v) * v * v / japanese(v, e) ** 2
        exact = 2.0 * _quad_log_split(weighted, grid.vmax)
        out[f"v2_eps_{eps:g}"] = abs(grid.integrate(weighted(grid.nodes)) / exact - 1.0)
    return out


def _quad_log_split(func, vmax: float) -> float:
    points = np.concatenate([[0.0], np.geomspace(1e-2, vmax, 12)])
    return float(sum(integrate.quad(func, a, b, limit=200)[0] for a, b in zip(points[:-1], points[1:])))


def c_1s(s: float) -> float:
    """Normalizing constant of <v>^{-1-2s} on the real line."""
    return float(special.gamma(0.5 + s) / (np.sqrt(np.pi) * special.gamma(s)))


def stable_density(v, s: float) -> np.ndarray:
    """Density of the symmetric stable law with Fourier transform exp(-|xi|^{2s}/(2s)).

    Cosine-weighted quadrature near the origin, the convergent/asymptotic power series
    for |v| >= SERIES_SWITCH. s == 1 is the Gaussian with unit variance.
    """
    v = np.abs(np.asarray(v, dtype=float))
    flat = v.ravel()
    out = np.empty_like(flat)
    core = (flat < SERIES_SWITCH) | (s >= 1.0)
    out[core] = [_stable_core(float(x), float(s)) for x in flat[core]]
    if np.any(~core):
        out[~core] = _stable_series(flat[~core], s)
    return out.reshape(v.shape)


@lru_cache(maxsize=65536)
def _stable_core(v: float, s: float) -> float:
    alpha = 2.0 * s
    cutoff = (alpha * 40.0) ** (1.0 / alpha)
    chf = lambda xi: np.exp(-(xi ** alpha) / alpha)
    if v == 0.0:
        value = integrate.quad(chf, 0.0, cutoff, limit=500, epsabs=1e-15)[0]
    else:
        value = integrate.quad(chf, 0.0, cutoff, weight="cos", wvar=v, limit=500, epsabs=1e-15)[0]
    return value / np.pi


def _stable_series(v: np.ndarray, s: float, terms: int = 40) -> np.ndarray:
    alpha = 2.0 * s
    gamma_scale = alpha ** (-1.0 / alpha)
    x = v / gamma_scale
    total = np.zeros_like(x)
    previous = np.full_like(x, np.inf)
    for k in range(1, terms + 1):
        log_mag = special.gammaln(alpha * k + 1.0) - special.gammaln(k + 1.0) - (alpha * k + 1.0) * np.log(x)
        term = (-1.0) ** (k + 1) * np.sin(k * np.pi * alpha / 2.0) * np.exp(log_mag)
        growing = np.abs(term) > previous
        if alpha > 1.0 and np.all(growing | (np.abs(term) < 1e-18 * np.abs(total))):
            break
        term = np.where(growing & (alpha > 1.0), 0.0, term)
        previous = np.where(term != 0.0, np.abs(term), previous)
        total += term
    return total / (np.pi * gamma_scale)


@dataclass(frozen=True, eq=False)
class Equilibrium:
    kind: str
    s: float
    values: np.ndarray
    grid: VelocityGrid
    mass_renorm: float
    tail_bounds: Tuple[float, float]

    def __post_init__(self):
        self.values.setflags(write=False)

    def c_eps(self, eps: float) -> float:
        """sum M w / <eps v>^2."""
        return float(self.grid.integrate(self.values / japanese(self.grid.nodes, eps) ** 2))

    def second_moment(self, eps: float) -> float:
        """sum M v^2 w / <eps v>^2."""
        v = self.grid.nodes
        return float(self.grid.integrate(self.values * v * v / japanese(v, eps) ** 2))

    def at(self, v) -> np.ndarray:
        """Continuum profile with the same discrete normalization, at arbitrary points."""
        v = np.asarray(v, dtype=float)
        if self.kind == "M1":
            return self.mass_renorm * c_1s(self.s) * japanese(v) ** (-1.0 - 2.0 * self.s)
        return self.mass_renorm * stable_density(v, self.s)


def _finalize(kind: str, s: float, raw: np.ndarray, grid: VelocityGrid) -> Equilibrium:
    mass = float(grid.integrate(raw))
    values = raw / mass
    ratio = values / japanese(grid.nodes) ** (-1.0 - 2.0 * s)
    bounds = (float(ratio.min()), float(ratio.max()))
    if bounds[0] <= 0.0:
        raise DiscretizationError(f"{kind} is not bounded below by a multiple of <v>^(-1-2s)")
    logger.debug("%s: mass renormalization %.6e, tail bounds %s", kind, 1.0 / mass, bounds)
    return Equilibrium(kind=kind, s=s, values=values, grid=grid, mass_renorm=1.0 / mass, tail_bounds=bounds)


def eval_M1(s: float, grid: VelocityGrid) -> Equilibrium:
    """c_{1,s} <v>^{-1-2s}, renormalized to unit discrete mass."""
    if not 0.0 < s < 1.0:
        raise GridError(f"s must lie in (0, 1), got {s}")
    raw = c_1s(s) * japanese(grid.nodes) ** (-1.0 - 2.0 * s)
    return _finalize("M1", s, raw, grid)


def eval_M2(s: float, grid: VelocityGrid) -> Equilibrium:
    """Stable-law equilibrium of the fractional Fokker-Planck operator."""
    if not 0.0 < s < 1.0:
        raise GridError(f"s must lie in (0, 1), got {s}")
    pos = grid.positive
    half = stable_density(grid.nodes[pos], s)
    scale = half.max()
    if np.any(half < -1e-12 * scale):
        raise DiscretizationError(f"stable density went negative ({half.min():.3e}) for s={s}")
    if np.any(half <= 0.0):
        raise DiscretizationError(f"stable density underflowed on the grid for s={s}")
    raw = np.empty(grid.n)
    raw[pos] = half
    raw[grid.pairing[pos]] = half
    return _finalize("M2", s, raw, grid)


@dataclass(frozen=True, eq=False)
class DistributionField:
    """Values f(x_i, v_k) on cells times velocity nodes."""

    values: np.ndarray
    xgrid: "SpatialGrid"
    vgrid: VelocityGrid

    def __post_init__(self):
        if self.values.shape != (self.xgrid.nx, self.vgrid.n):
            raise GridError(f"field shape {self.values.shape} does not match grids "
                            f"({self.xgrid.nx}, {self.vgrid.n})")

    def with_values(self, values: np.ndarray) -> "DistributionField":
        return DistributionField(values=values, xgrid=self.xgrid, vgrid=self.vgrid)

    def rho(self) -> np.ndarray:
        return self.vgrid.integrate(self.values)

    def mass(self) -> float:
        return float(self.xgrid.integrate(self.rho()))

    def perp(self, M: Equilibrium) -> np.ndarray:
        """f - rho[f] M."""
        return self.values - np.outer(self.rho(), M.values)


def _check_grids(f: DistributionField, M: Equilibrium) -> None:
    if not f.vgrid.same_as(M.grid):
        raise GridError("field and equilibrium live on different velocity grids")


def weighted_inner_H(f: DistributionField, g: DistributionField, M: Equilibrium) -> float:
    """<f, g> in L^2(M^{-1} dx dv)."""
    _check_grids(f, M)
    _check_grids(g, M)
    local = f.vgrid.integrate(f.values * g.values / M.values)
    return float(f.xgrid.integrate(local))


def weighted_norm_H(f: DistributionField, M: Equilibrium) -> float:
    return float(np.sqrt(max(weighted_inner_H(f, f, M), 0.0)))


def velocity_inner(a: np.ndarray, b: np.ndarray, M: Equilibrium) -> np.ndarray:
    """<a, b> in L^2(M^{-1} dv), over the last axis."""
    return M.grid.integrate(a * b / M.values)


def equilibrium_frame(M: Equilibrium) -> pd.DataFrame:
    grid = M.grid
    return pd.DataFrame({"v": grid.nodes, "w": grid.weights, "M": M.values,
                         "tail_ratio": M.values * japanese(grid.nodes) ** (1.0 + 2.0 * M.s)})
