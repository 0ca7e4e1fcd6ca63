"""Macroscopic moments, their eps-scaling and the Neumann elliptic inverse.

The elliptic problem (Id - d_xx) u = eta_1 + d_x eta_2 is discretized on cell centers with
the compact fourth-order stencil

    (B + K) u = B eta_1 + Div eta_2,   B = 1 + delta^2/12,   K = -delta^2/dx^2,

where delta^2 is the second difference closed by a mirror ghost cell (homogeneous Neumann
data) and Div the conservative divergence with averaged face values and zero wall flux.
B and K are symmetric, commute and share the cosine eigenvectors, so the discrete
operator is SPD and every bound of the continuous problem holds with the discrete
first eigenvalue.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg

from .equilibria import DistributionField, Equilibrium, japanese
from .errors import DiscretizationError, GridError
from .geometry import SpatialGrid

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MacroFields:
    rho: np.ndarray
    j: np.ndarray
    rho_eps: np.ndarray
    j_eps: np.ndarray
    c_eps: float


def twisted_weights(M: Equilibrium, eps: float) -> Tuple[np.ndarray, np.ndarray]:
    """Quadrature weights of rho_eps and J_eps: w / <eps v>^2 and v w / <eps v>^2."""
    grid = M.grid
    base = grid.weights / japanese(grid.nodes, eps) ** 2
    return base, grid.nodes * base


def compute_moments(f: DistributionField, eps: float, M: Equilibrium) -> MacroFields:
    if not f.vgrid.same_as(M.grid):
        raise GridError("field and equilibrium live on different velocity grids")
    w, v = M.grid.weights, M.grid.nodes
    tw, tj = twisted_weights(M, eps)
    return MacroFields(rho=f.values @ w, j=f.values @ (v * w), rho_eps=f.values @ tw,
                       j_eps=f.values @ tj, c_eps=M.c_eps(eps))


def rho_eps(values: np.ndarray, M: Equilibrium, eps: float) -> np.ndarray:
    return values @ twisted_weights(M, eps)[0]


def j_eps(values: np.ndarray, M: Equilibrium, eps: float) -> np.ndarray:
    return values @ twisted_weights(M, eps)[1]


def twisted_identity_residuals(f: DistributionField, eps: float, M: Equilibrium) -> Dict[str, float]:
    """Cell-wise residuals of the three twisted-moment identities, relative to ||f||."""
    mf = compute_moments(f, eps, M)
    perp = f.perp(M)
    tw, _ = twisted_weights(M, eps)
    v = M.grid.nodes
    rho_perp = perp @ tw
    eps_weight = M.grid.weights * (eps * v) ** 2 / japanese(v, eps) ** 2
    scale = max(float(np.max(np.abs(f.values) @ M.grid.weights)), 1e-300)
    return {
        "rho_eps_split": float(np.max(np.abs(mf.rho_eps - mf.c_eps * mf.rho - rho_perp))) / scale,
        "rho_eps_perp": float(np.max(np.abs(rho_perp + perp @ eps_weight))) / scale,
        "j_eps_perp": float(np.max(np.abs(mf.j_eps - perp @ twisted_weights(M, eps)[1]))) / scale,
    }


@dataclass(frozen=True)
class EllipticSolution:
    u: np.ndarray
    grad: np.ndarray


@dataclass(eq=False)
class EllipticSolver:
    """Factorized compact operator for (Id - d_xx) on the slab or the torus."""

    xgrid: SpatialGrid
    _factor: Optional[np.ndarray] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        h, n = self.xgrid.dx, self.xgrid.nx
        if not np.isfinite(h) or h <= 0.0:
            raise GridError(f"degenerate spacing {h}")
        if not self.xgrid.periodic:
            diag = np.full(n, 1.0 - 2.0 / 12.0 + 2.0 / h ** 2)
            diag[[0, -1]] = 1.0 - 1.0 / 12.0 + 1.0 / h ** 2
            upper = np.zeros((2, n))
            upper[0, 1:] = 1.0 / 12.0 - 1.0 / h ** 2
            upper[1] = diag
            self._factor = linalg.cholesky_banded(upper)

    @property
    def nx(self) -> int:
        return self.xgrid.nx

    @property
    def dx(self) -> float:
        return self.xgrid.dx

    def second_difference(self, u: np.ndarray) -> np.ndarray:
        if self.xgrid.periodic:
            return np.roll(u, -1) - 2.0 * u + np.roll(u, 1)
        padded = np.concatenate([u[:1], u, u[-1:]])
        return padded[2:] - 2.0 * padded[1:-1] + padded[:-2]

    def mass_operator(self, u: np.ndarray) -> np.ndarray:
        """B u."""
        return u + self.second_difference(u) / 12.0

    def stiffness_operator(self, u: np.ndarray) -> np.ndarray:
        """K u."""
        return -self.second_difference(u) / self.dx ** 2

    def divergence(self, eta: np.ndarray) -> np.ndarray:
        if self.xgrid.periodic:
            faces = 0.5 * (eta + np.roll(eta, -1))
            return (faces - np.roll(faces, 1)) / self.dx
        faces = np.concatenate([[0.0], 0.5 * (eta[1:] + eta[:-1]), [0.0]])
        return np.diff(faces) / self.dx

    def face_gradient(self, u: np.ndarray) -> np.ndarray:
        """Differences across interior faces (all faces on the torus)."""
        if self.xgrid.periodic:
            return (np.roll(u, -1) - u) / self.dx
        return np.diff(u) / self.dx

    def gradient(self, u: np.ndarray) -> np.ndarray:
        """Cell-centered gradient with the same ghost closure as the operator."""
        if self.xgrid.periodic:
            return (np.roll(u, -1) - np.roll(u, 1)) / (2.0 * self.dx)
        padded = np.concatenate([u[:1], u, u[-1:]])
        return (padded[2:] - padded[:-2]) / (2.0 * self.dx)

    def symbols(self) -> Tuple[np.ndarray, np.ndarray]:
        """Eigenvalues (b_m, k_m) of B and K on the cosine / Fourier modes."""
        n, h = self.nx, self.dx
        m = np.arange(n)
        theta = 2.0 * np.pi * m / n if self.xgrid.periodic else np.pi * m / n
        sin2 = np.sin(theta / 2.0) ** 2
        return 1.0 - sin2 / 3.0, 4.0 * sin2 / h ** 2

    @property
    def lambda1(self) -> float:
        """First nonzero eigenvalue of the discrete Neumann (or periodic) Laplacian."""
        b, k = self.symbols()
        return float(np.min(k[1:] / b[1:]))

    def solve(self, eta1: np.ndarray, eta2: Optional[np.ndarray] = None) -> EllipticSolution:
        eta1 = np.asarray(eta1, dtype=float)
        if eta1.shape != (self.nx,):
            raise GridError(f"right-hand side of shape {eta1.shape} on a grid of {self.nx} cells")
        rhs = self.mass_operator(eta1)
        if eta2 is not None:
            rhs = rhs + self.divergence(np.asarray(eta2, dtype=float))
        if self.xgrid.periodic:
            b, k = self.symbols()
            m = np.arange(self.nx // 2 + 1)
            u = np.fft.irfft(np.fft.rfft(rhs) / (b[m] + k[m]), n=self.nx)
        else:
            u = linalg.cho_solve_banded((self._factor, False), rhs)
        return EllipticSolution(u=u, grad=self.gradient(u))

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.sum(a * b) * self.dx)

    def energy_norm(self, u: np.ndarray) -> float:
        """Discrete H^1 norm: <B u, u> + ||face gradient||^2."""
        g = self.face_gradient(u)
        return float(np.sqrt(self.inner(self.mass_operator(u), u) + np.sum(g * g) * self.dx))

    def wall_values(self, u: np.ndarray) -> Tuple[float, float, float, float]:
        """Third-order extrapolated u and d_x u at x = 0 and x = L."""
        if self.xgrid.periodic:
            raise GridError("the torus has no walls")
        h = self.dx
        u0 = (15 * u[0] - 10 * u[1] + 3 * u[2]) / 8
        uL = (15 * u[-1] - 10 * u[-2] + 3 * u[-3]) / 8
        d0 = (-2 * u[0] + 3 * u[1] - u[2]) / h
        dL = (2 * u[-1] - 3 * u[-2] + u[-3]) / h
        return float(u0), float(uL), float(d0), float(dL)


def build_elliptic_solver(xgrid: SpatialGrid) -> EllipticSolver:
    return EllipticSolver(xgrid)


def elliptic_solve(solver: EllipticSolver, eta1, eta2=None) -> EllipticSolution:
    return solver.solve(eta1, eta2)


def elliptic_estimates(solver: EllipticSolver, eta1: np.ndarray, eta2: Optional[np.ndarray] = None) -> Dict[str, float]:
    """Ratios of the discrete elliptic bounds; each ``*_margin`` must be >= 0.

    ``h1_margin``: ||eta1|| + ||eta2|| - ||u||_{H^1}.
    For mean-free eta1 and no eta2 also the Poincare margins
    ``<eta1,u> - (1+lambda1)||u||^2`` and ``||eta1||^2/(1+lambda1) - <eta1,u>``,
    the second-difference ratio and the wall trace ratio.
    """
    sol = solver.solve(eta1, eta2)
    norm = lambda a: np.sqrt(solver.inner(a, a))
    n1 = norm(eta1)
    n2 = 0.0 if eta2 is None else norm(eta2)
    out = {"h1_margin": float(n1 + n2 - solver.energy_norm(sol.u))}
    if eta2 is None and n1 > 0.0:
        lam = solver.lambda1
        pair = solver.inner(eta1, sol.u)
        out["mean"] = float(np.sum(sol.u) * solver.dx)
        out["poincare_margin"] = float(pair - (1.0 + lam) * norm(sol.u) ** 2)
        out["duality_margin"] = float(n1 ** 2 / (1.0 + lam) - pair)
        out["h2_ratio"] = float(norm(solver.stiffness_operator(sol.u)) / n1)
        if not solver.xgrid.periodic:
            out["trace_ratio"] = float(np.sum(np.abs(solver.wall_values(sol.u))) / n1)
        out["scale"] = float(n1 ** 2)
    return out


def macro_gain(solver: EllipticSolver, rho: np.ndarray) -> float:
    """<d_x u, d_x rho> / <B rho, rho> with u = (Id - d_xx)^{-1} rho, rho mean-free.

    Bounded below by lambda1 / (1 + lambda1).
    """
    rho = np.asarray(rho, dtype=float) - np.mean(rho)
    u = solver.solve(rho).u
    top = float(np.sum(solver.face_gradient(u) * solver.face_gradient(rho)) * solver.dx)
    return top / solver.inner(solver.mass_operator(rho), rho)


# eps-scaling of the twisted moments


def sharp_constants(M: Equilibrium, eps: float) -> Dict[str, float]:
    """Cauchy-Schwarz constants K with ||moment[g_perp]|| <= K ||g_perp||_H."""
    v, w, m = M.grid.nodes, M.grid.weights, M.values
    q = japanese(v, eps) ** 4
    return {
        "rho_perp": float(np.sqrt(np.sum(m * (eps * v) ** 4 / q * w))),
        "j_eps": float(np.sqrt(np.sum(m * v ** 2 / q * w))),
        "second": float(np.sqrt(np.sum(m * v ** 4 / q * w))),
        "rho_full": float(np.sqrt(np.sum(m / q * w))),
    }


def second_moment_weighted(M: Equilibrium, eps: float) -> Tuple[float, float]:
    """(m2(eps), m2(eps) eps^{2-2s})."""
    m2 = M.second_moment(eps)
    return m2, m2 * eps ** (2.0 - 2.0 * M.s)


def differenced_exponent(eps_list: Sequence[float], values: Sequence[float], last: Optional[int] = 2) -> float:
    """Exponent p of y ~ A eps^p + B from log|y(eps_i) - y(eps_{i-1})| against log eps_i.

    The core of M adds corrections of relative size eps^2, so only the ``last``
    smallest-eps differences enter the fit (all of them with ``last=None``).
    """
    eps = np.asarray(eps_list, dtype=float)
    y = np.asarray(values, dtype=float)
    if eps.size < 3:
        raise DiscretizationError("need at least three eps values for a differenced fit")
    order = np.argsort(eps)[::-1]
    eps, y = eps[order], y[order]
    diffs = np.abs(np.diff(y))
    if np.any(diffs <= 0.0):
        raise DiscretizationError("moment is not strictly monotone in eps")
    log_eps, log_diffs = np.log(eps[1:]), np.log(diffs)
    if last is not None:
        log_eps, log_diffs = log_eps[-max(last, 2):], log_diffs[-max(last, 2):]
    return float(np.polyfit(log_eps, log_diffs, 1)[0])


def truncation_fraction(M: Equilibrium, eps: float) -> float:
    """Share of sum M v^4 / <eps v>^4 lying beyond vmax, from the power-law tail of M."""
    v, V = M.grid.nodes, M.grid.vmax
    amplitude = M.values[-1] * v[-1] ** (1.0 + 2.0 * M.s)
    tail = amplitude * eps ** -4 * V ** (-2.0 * M.s) / (2.0 * M.s)
    return float(tail / (sharp_constants(M, eps)["second"] ** 2 + tail))


@dataclass(frozen=True)
class ScalingProbe:
    s: float
    eps: Tuple[float, ...]
    constants: pd.DataFrame
    exponents: Dict[str, float]
    expected: Dict[str, float]
    tol: float
    observed: Dict[str, float] = field(default_factory=dict)

    @property
    def deviations(self) -> Dict[str, float]:
        return {k: abs(self.exponents[k] - self.expected[k]) for k in self.expected}

    @property
    def passed(self) -> bool:
        return all(d <= self.tol for d in self.deviations.values())


def moment_scaling_probe(M: Equilibrium, eps_list: Iterable[float], f_perp: Optional[DistributionField] = None,
                         tol: float = 0.15, max_truncation: float = 0.25, strict: bool = True) -> ScalingProbe:
    """Fit the eps-exponents of the twisted-moment estimates and of m2.

    Exponents come from the sharp constants (differenced fit on K^2, halved). With
    ``f_perp`` the actual moment norms of that field are checked against the constants
    and their plain log-log slopes are reported under ``observed``.
    """
    eps = tuple(sorted((float(e) for e in eps_list), reverse=True))
    for e in eps:
        frac = truncation_fraction(M, e)
        if frac > max_truncation:
            raise DiscretizationError(f"vmax={M.grid.vmax:g} too small for eps={e:g}: "
                                      f"{100 * frac:.0f}% of the fourth moment is truncated")
    rows = []
    for e in eps:
        row = {"eps": e, **sharp_constants(M, e)}
        row["m2"], row["m2_scaled"] = second_moment_weighted(M, e)
        rows.append(row)
    table = pd.DataFrame(rows)

    exponents = {k: 0.5 * differenced_exponent(table["eps"], table[k] ** 2) for k in ("rho_perp", "j_eps", "second")}
    exponents["m2"] = differenced_exponent(table["eps"], table["m2"])
    s = M.s
    expected = {"rho_perp": s, "j_eps": s - 1.0, "second": s - 2.0, "m2": 2.0 * s - 2.0}

    observed = {}
    if f_perp is not None:
        observed = _observed_slopes(f_perp, M, table)
    probe = ScalingProbe(s=s, eps=eps, constants=table, exponents=exponents, expected=expected, tol=tol,
                         observed=observed)
    logger.info("scaling exponents %s (expected %s)", exponents, expected)
    if strict and not probe.passed:
        raise DiscretizationError(f"scaling exponent deviation {probe.deviations} exceeds {tol}")
    return probe


def _observed_slopes(f_perp: DistributionField, M: Equilibrium, table: pd.DataFrame) -> Dict[str, float]:
    xg = f_perp.xgrid
    values = f_perp.values
    if np.max(np.abs(values @ M.grid.weights)) > 1e-10 * max(np.max(np.abs(values)), 1e-300):
        raise DiscretizationError("probe field is not mean-free per cell")
    norm_perp = np.sqrt(xg.integrate((values ** 2 / M.values) @ M.grid.weights))
    v = M.grid.nodes
    measured = {"rho_perp": [], "j_eps": [], "second": []}
    for _, row in table.iterrows():
        e = row["eps"]
        tw, tj = twisted_weights(M, e)
        for key, moment in (("rho_perp", values @ tw), ("j_eps", values @ tj), ("second", values @ (v * v * tw))):
            size = np.sqrt(xg.integrate(moment ** 2)) / norm_perp
            if size > row[key] * (1 + 1e-10):
                raise DiscretizationError(f"{key} moment exceeds its Cauchy-Schwarz constant at eps={e:g}")
            measured[key].append(size)
    log_eps = np.log(table["eps"].to_numpy())
    return {k: float(np.polyfit(log_eps, np.log(np.maximum(vals, 1e-300)), 1)[0]) for k, vals in measured.items()}
