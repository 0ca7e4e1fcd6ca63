"""Discrete collision operators on the velocity grid.

Every operator is a dense n x n matrix acting on nodal values g(v_k).
Mass is the weighted column sum: sum_k w_k (A g)_k = 0 for all g.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg, special

from .config import ModelConfig, NuSpec, SigmaSpec
from .equilibria import Equilibrium, VelocityGrid, eval_M2, japanese
from .errors import ConfigError, DiscretizationError, GridError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CollisionMatrix:
    matrix: np.ndarray
    kind: str
    grid: VelocityGrid
    x: float = 0.0
    raw_residual: float = 0.0
    mass_defect: float = 0.0
    dissipation_defect: float = 0.0

    def __post_init__(self):
        self.matrix.setflags(write=False)

    def apply(self, g) -> np.ndarray:
        """A g over the last axis."""
        return np.asarray(g) @ self.matrix.T

    def scaled(self, factor: float, x: float) -> "CollisionMatrix":
        return CollisionMatrix(matrix=factor * self.matrix, kind=self.kind, grid=self.grid, x=x,
                               raw_residual=self.raw_residual, mass_defect=self.mass_defect,
                               dissipation_defect=self.dissipation_defect)

    def frame(self) -> pd.DataFrame:
        v = self.grid.nodes
        return pd.DataFrame(self.matrix, index=pd.Index(v, name="v"), columns=[f"{x:.6e}" for x in v])


def _check(M: Equilibrium, grid: VelocityGrid) -> None:
    if not grid.same_as(M.grid):
        raise GridError("equilibrium and operator grids differ")


def build_bgk(M: Equilibrium, grid: VelocityGrid, x: float = 0.0, rate: float = 1.0) -> CollisionMatrix:
    """rate * (rho[g] M - g)."""
    _check(M, grid)
    A = rate * (np.outer(M.values, grid.weights) - np.eye(grid.n))
    return CollisionMatrix(matrix=A, kind="bgk", grid=grid, x=x)


def build_L1(sigma: SigmaSpec, M: Equilibrium, grid: VelocityGrid, x: float) -> CollisionMatrix:
    """Linear Boltzmann operator with kernel sigma(x, v, v') M(v)."""
    _check(M, grid)
    v = grid.nodes
    S = sigma.evaluate(x, v[:, None], v[None, :])
    lo, hi = sigma.bounds()
    if S.min() < lo * (1 - 1e-12) or S.max() > hi * (1 + 1e-12):
        raise ConfigError(f"sigma leaves [{lo}, {hi}] at x={x:.4f}")
    if not np.allclose(S, S.T, rtol=0, atol=1e-14 * hi):
        raise ConfigError(f"sigma is not symmetric in (v, v') at x={x:.4f}")
    A = S * M.values[:, None] * grid.weights[None, :]
    A[np.diag_indices_from(A)] -= S @ (M.values * grid.weights)
    return CollisionMatrix(matrix=A, kind="boltzmann", grid=grid, x=x)


_GAUSS_NODES, _GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(8)


def levy_constant(s: float) -> float:
    """C_{1,s} of the jump kernel of (-Delta)^s with Fourier symbol |xi|^{2s}."""
    return float(4.0 ** s * special.gamma(0.5 + s) / (np.sqrt(np.pi) * abs(special.gamma(-s))))


def _interval_stencils(n: int) -> np.ndarray:
    """Four nodes interpolating each interval [v_j, v_{j+1}], centred where the grid allows."""
    start = np.clip(np.arange(n - 1) - 1, 0, n - 4)
    return start[:, None] + np.arange(4)[None, :]


def _gauss(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid[:, None] + half[:, None] * _GAUSS_NODES, half[:, None] * _GAUSS_WEIGHTS


def _lagrange(nodes: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Cubic Lagrange basis of each row of ``nodes`` (m, 4) at points ``x`` (m, q); shape (m, q, 4)."""
    out = np.ones(x.shape + (nodes.shape[1],))
    for a in range(nodes.shape[1]):
        for b in range(nodes.shape[1]):
            if a != b:
                out[..., a] *= (x - nodes[:, b, None]) / (nodes[:, a] - nodes[:, b])[:, None]
    return out


def _tail_integral(start: float, y: float, p: float) -> float:
    """int_start^inf x^{-p} (x - y)^{-p} dx for y < start."""
    return float(start ** (1.0 - 2.0 * p) / (2.0 * p - 1.0) * special.hyp2f1(p, 2.0 * p - 1.0, 2.0 * p, y / start))


def _jump_part(s: float, grid: VelocityGrid) -> np.ndarray:
    """-(-Delta)^s g at the nodes.

    Around each node the symmetric window |v' - v_k| < r_k is integrated through the
    second-order Taylor term, the curvature taken from three nodes; odd terms cancel.
    Outside the window g is the piecewise cubic interpolant, integrated against the kernel
    with Gauss-Legendre on every interval. Beyond the outer nodes g continues as
    g(v_end) (v_end / v)^{1+2s}, integrated in closed form.
    """
    v, n = grid.nodes, grid.n
    C, two_s = levy_constant(s), 2.0 * s
    p = 1.0 + two_s

    stencil = _interval_stencils(n)
    points, qweights = _gauss(v[:-1], v[1:])
    basis = _lagrange(v[stencil], points)

    gaps = np.diff(v)
    radius = np.empty(n)
    radius[1:-1] = np.minimum(gaps[:-1], gaps[1:])
    radius[0], radius[-1] = gaps[0], gaps[-1]

    J = np.zeros((n, n))
    for k in range(n):
        row, r = J[k], radius[k]
        row[k] -= 2.0 * C * r ** -two_s / two_s

        trio = np.clip(k - 1, 0, n - 3) + np.arange(3)
        x = v[trio]
        curvature = 2.0 / np.array([(x[0] - x[1]) * (x[0] - x[2]), (x[1] - x[0]) * (x[1] - x[2]),
                                    (x[2] - x[0]) * (x[2] - x[1])])
        row[trio] += C * r ** (2.0 - two_s) / (2.0 - two_s) * curvature

        kernel = qweights * np.abs(v[k] - points) ** -p
        kernel[max(k - 1, 0):k + 1] = 0.0
        np.add.at(row, stencil, C * np.einsum("jq,jqa->ja", kernel, basis))

        pieces = []
        if k > 0:
            pieces.append((k - 1, v[k - 1], v[k] - r))
        if k < n - 1:
            pieces.append((k, v[k] + r, v[k + 1]))
        for j, a, b in pieces:
            if b - a <= 1e-12 * r:
                continue
            xq, wq = _gauss(np.array([a]), np.array([b]))
            phi = _lagrange(v[stencil[j]][None, :], xq)[0]
            row[stencil[j]] += C * (wq[0] * np.abs(v[k] - xq[0]) ** -p) @ phi

        right = v[-1] + (r if k == n - 1 else 0.0)
        left = -v[0] + (r if k == 0 else 0.0)
        row[-1] += C * v[-1] ** p * _tail_integral(right, v[k], p)
        row[0] += C * (-v[0]) ** p * _tail_integral(left, -v[k], p)
    return J


def _drift_part(M: Equilibrium, grid: VelocityGrid) -> np.ndarray:
    """d/dv (v g) in flux form: exact M on the faces times the centred average of g/M.

    The faces at +-vmax carry the outer node's g/M, the same tail the jump part assumes.
    """
    e, w, n = grid.edges, grid.weights, grid.n
    Me = M.at(e)
    ratio = 1.0 / M.values
    D = np.zeros((n, n))
    # face i is the right face of cell i - 1 and the left face of cell i
    i = np.arange(1, n)
    L, R = i - 1, i
    half = 0.5 * e[i] * Me[i]
    D[L, L] += half * ratio[L] / w[L]
    D[L, R] += half * ratio[R] / w[L]
    D[R, L] -= half * ratio[L] / w[R]
    D[R, R] -= half * ratio[R] / w[R]
    D[n - 1, n - 1] += e[n] * Me[n] * ratio[n - 1] / w[n - 1]
    D[0, 0] -= e[0] * Me[0] * ratio[0] / w[0]
    return D


@dataclass(frozen=True)
class GeneratorDiagnostics:
    raw_residual: float
    mass_defect: float
    dissipation_defect: float


def levy_fp_generator(s: float, grid: VelocityGrid, M: Equilibrium,
                      mass_defect_max: float = 0.1) -> Tuple[np.ndarray, GeneratorDiagnostics]:
    """Assemble -(-Delta)^s g + d/dv(v g) for unit nu.

    The raw matrix is sandwiched between P = I - M w^T on both sides, so the result
    conserves mass and annihilates M to round-off. Diagnostics:

    - raw_residual: ||A_raw M|| / ||M|| in l^2(M^{-1} w), before the projection
    - mass_defect: largest entry of the projection correction over the largest raw entry
    - dissipation_defect: top eigenvalue of the symmetric part in l^2(M^{-1} w), relative
    """
    _check(M, grid)
    raw = _jump_part(s, grid) + _drift_part(M, grid)
    w, m = grid.weights, M.values

    P = np.eye(grid.n) - np.outer(m, w)
    G = P @ raw @ P
    defect = float(np.max(np.abs(G - raw)) / np.max(np.abs(raw)))
    if defect > mass_defect_max:
        raise DiscretizationError(
            f"mass-defect correction is {defect:.3f} of the matrix norm (limit {mass_defect_max}); "
            "velocity tails are under-resolved"
        )

    residual = raw @ m
    raw_residual = float(np.sqrt(grid.integrate(residual * residual / m) / grid.integrate(m)))

    weighted = (w / m)[:, None] * G
    spectrum = linalg.eigvalsh(0.5 * (weighted + weighted.T))
    dissipation = float(max(spectrum[-1], 0.0) / np.max(np.abs(spectrum)))

    logger.info("levy-fp generator s=%.3f n=%d: raw residual %.3e, mass defect %.3e, dissipation defect %.3e",
                s, grid.n, raw_residual, defect, dissipation)
    if dissipation > 1e-8:
        logger.warning("levy-fp generator is not dissipative in l2(1/M): top eigenvalue %.3e of the spectral scale",
                       dissipation)
    return G, GeneratorDiagnostics(raw_residual, defect, dissipation)


def build_L2(nu: NuSpec, s: float, grid: VelocityGrid, x: float, M: Optional[Equilibrium] = None,
             mass_defect_max: float = 0.1) -> CollisionMatrix:
    """nu(x) times the Levy-Fokker-Planck generator."""
    lo, hi = nu.bounds()
    value = float(nu.evaluate(x))
    if value < lo * (1 - 1e-12) or value > hi * (1 + 1e-12):
        raise ConfigError(f"nu(x={x}) = {value} leaves [{lo}, {hi}]")
    M = eval_M2(s, grid) if M is None else M
    G, diag = levy_fp_generator(s, grid, M, mass_defect_max)
    return CollisionMatrix(matrix=value * G, kind="levy_fp", grid=grid, x=x, raw_residual=diag.raw_residual,
                           mass_defect=diag.mass_defect, dissipation_defect=diag.dissipation_defect)


@dataclass(frozen=True, eq=False)
class CollisionSet:
    """One matrix per spatial cell; cells with identical kernels share one object."""

    cells: Tuple[CollisionMatrix, ...]

    @property
    def groups(self) -> List[Tuple[CollisionMatrix, np.ndarray]]:
        seen: Dict[int, Tuple[CollisionMatrix, List[int]]] = {}
        for i, A in enumerate(self.cells):
            seen.setdefault(id(A), (A, []))[1].append(i)
        return [(A, np.asarray(idx)) for A, idx in seen.values()]

    def apply(self, values: np.ndarray) -> np.ndarray:
        out = np.empty_like(values)
        for A, idx in self.groups:
            out[idx] = A.apply(values[idx])
        return out


def assemble_collision(model: ModelConfig, M: Equilibrium, grid: VelocityGrid, centers: Sequence[float],
                       mass_defect_max: float = 0.1) -> CollisionSet:
    centers = np.asarray(centers, dtype=float)
    kind = model.operator_kind
    if kind == "bgk":
        A = build_bgk(M, grid)
        return CollisionSet(tuple(A for _ in centers))
    if kind == "boltzmann":
        if not model.sigma.x_dependent:
            A = build_L1(model.sigma, M, grid, float(centers[0]))
            return CollisionSet(tuple(A for _ in centers))
        return CollisionSet(tuple(build_L1(model.sigma, M, grid, float(x)) for x in centers))
    if kind == "levy_fp":
        base = build_L2(NuSpec("constant", 1.0), model.s, grid, 0.0, M, mass_defect_max)
        if not model.nu.x_dependent:
            A = base.scaled(model.nu.value, 0.0)
            return CollisionSet(tuple(A for _ in centers))
        return CollisionSet(tuple(base.scaled(float(model.nu.evaluate(x)), float(x)) for x in centers))
    raise ConfigError(f"unknown operator kind '{kind}'")


def random_velocity_profiles(M: Equilibrium, size: int, seed: int = 0) -> np.ndarray:
    """Random elements of L^2(M^{-1} dv): M times smooth profiles plus nodal noise."""
    rng = np.random.default_rng(seed)
    v = M.grid.nodes
    t = v / japanese(v)
    basis = np.stack([np.ones_like(v), t, t * t - 0.5, np.cos(v), np.sin(v) / japanese(v, 0.5), t ** 3])
    coeffs = rng.normal(size=(size, basis.shape[0]))
    noise = 0.2 * rng.normal(size=(size, v.size))
    return M.values * (coeffs @ basis + noise)


def coercivity_ratios(A: CollisionMatrix, M: Equilibrium, ensemble) -> np.ndarray:
    """-<A g, g>_M / ||g_perp||_M^2 for each row g of the ensemble."""
    g = np.atleast_2d(np.asarray(ensemble, dtype=float))
    w = M.grid.weights
    num = -((A.apply(g) * g / M.values) @ w)
    perp = g - np.outer(g @ w, M.values)
    den = (perp * perp / M.values) @ w
    scale = (g * g / M.values) @ w
    keep = den > 1e-14 * scale
    return num[keep] / den[keep]


def collision_coercivity(A: CollisionMatrix, M: Equilibrium, ensemble) -> float:
    """Smallest coercivity ratio over the ensemble."""
    ratios = coercivity_ratios(A, M, ensemble)
    if ratios.size == 0:
        raise DiscretizationError("ensemble has no microscopic part")
    lam = float(ratios.min())
    if lam <= 0.0:
        raise DiscretizationError(f"non-positive collision coercivity ratio {lam:.3e} ({A.kind})")
    return lam
