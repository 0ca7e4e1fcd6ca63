"""Experiment orchestration: decay fits, eps sweeps and the invariant suite."""

from __future__ import annotations

import concurrent.futures as cf
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import integrate
from tqdm import tqdm

from .collision import CollisionSet, collision_coercivity, levy_fp_generator, random_velocity_profiles
from .config import HarnessConfig
from .equilibria import build_velocity_grid, eval_M2, velocity_inner, weighted_norm_H
from .errors import DiscretizationError, FitError, KineticsError
from .evolution import (Problem, admissible_smooth_field, build_problem, dissipation_identity, evolve_and_record,
                        initial_field, initial_state, random_fields, reflected_traces, step)
from .geometry import (D_op, D_perp, apply_reflection, boundary_inner, build_spatial_grid, extract_traces,
                       boundary_decomposition_residual, wall_flux)
from .hyponorm import HypoNorm, coercivity_functional, collision_flux_probe, norm_equivalence, select_delta
from .macro import (build_elliptic_solver, elliptic_estimates, macro_gain, moment_scaling_probe,
                    twisted_identity_residuals)

logger = logging.getLogger(__name__)

MASS_TOL = 1e-10
LEVY_RESIDUAL_NV = 512
LEVY_RESIDUAL_TOL = 1e-3
DISSIPATION_NX = (64, 128, 256)


# decay fitting


@dataclass(frozen=True)
class DecayFit:
    lambda_hat: float
    C_hat: float
    residual: float
    window: float
    n_points: int


def fit_decay(series: pd.DataFrame, window: float = 0.8, floor: float = 1e-11,
              column: str = "H_norm") -> DecayFit:
    """Least-squares line through log ||f(t)|| over the last ``window`` of the usable run.

    Points that fell below ``floor`` times the initial value are round-off and dropped first;
    the window is then measured back from the last usable time, so runs that reach the floor
    early still fit over their decaying part.
    """
    t = series["t"].to_numpy(dtype=float)
    y = series[column].to_numpy(dtype=float)
    if y.size == 0 or not np.any(y > 0.0):
        raise FitError(f"{column} series is identically zero")
    usable = y > floor * y[0]
    t, y = t[usable], y[usable]
    if y.size < 3:
        raise FitError(f"only {y.size} usable points in the fit window")
    start = t[-1] - window * (t[-1] - t[0])
    keep = t >= start - 1e-12 * max(abs(t[-1]), 1.0)
    t, y = t[keep], y[keep]
    if y.size < 3:
        raise FitError(f"only {y.size} usable points in the fit window")
    if np.any(np.diff(y) > 1e-9 * y[:-1]):
        raise FitError(f"{column} series is not monotone over the fit window")
    slope, intercept = np.polyfit(t, np.log(y), 1)
    residual = float(np.sqrt(np.mean((np.log(y) - (slope * t + intercept)) ** 2)))
    return DecayFit(lambda_hat=float(-slope), C_hat=float(np.exp(intercept)), residual=residual,
                    window=window, n_points=int(y.size))


def dissipation_integral(series: pd.DataFrame, rate: float, eps: float, s: float) -> float:
    """eps^{-2s} int_0^T ||f_perp||^2 e^{2 rate t} dt by the trapezoidal rule."""
    t = series["t"].to_numpy(dtype=float)
    micro = series["micro_norm"].to_numpy(dtype=float)
    return float(eps ** (-2.0 * s) * integrate.trapezoid(micro ** 2 * np.exp(2.0 * rate * t), t))


# sweeps


@dataclass(frozen=True)
class DecayRecord:
    eps: float
    seed: int
    lambda_hat: float = float("nan")
    C_hat: float = float("nan")
    fit_window: float = float("nan")
    fit_residual: float = float("nan")
    dissipation_integral: float = float("nan")
    dissipation_ratio: float = float("nan")
    min_coercivity_ratio: float = float("nan")
    mass_drift: float = float("nan")
    delta: float = float("nan")
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True)
class SweepRun:
    record: DecayRecord
    series: Optional[pd.DataFrame] = None


def run_one(cfg: HarnessConfig, eps: float, seed: int, delta: float, progress: bool = False) -> SweepRun:
    """One trajectory with its fit, dissipation integral and coercivity ensemble.

    Errors are caught and returned inside the record so a sweep never aborts.
    """
    try:
        cfg = cfg.override(eps=eps, delta=delta)
        sim = cfg.sim
        problem = build_problem(cfg.model, sim)
        f0 = initial_field(sim.initial, problem, seed)
        series = evolve_and_record(initial_state(problem, f0.values), sim.T, sim.dt, sim.record_every,
                                   delta=delta, progress=progress)
        size = weighted_norm_H(f0, problem.M)
        mass_drift = float(np.max(np.abs(series["mass"] - series["mass"].iloc[0]))) / (size * sim.T)

        fit = fit_decay(series, sim.fit_window, sim.fit_floor)
        rate = sim.dissipation_rate_fraction * fit.lambda_hat
        integral = dissipation_integral(series, rate, eps, problem.s)

        norm = HypoNorm.for_problem(problem, delta)
        ratios = [coercivity_functional(f, problem, norm).ratio
                  for f in random_fields(problem, sim.ensemble_size, seed)]
        record = DecayRecord(eps=eps, seed=seed, lambda_hat=fit.lambda_hat, C_hat=fit.C_hat, fit_window=fit.window,
                             fit_residual=fit.residual, dissipation_integral=integral,
                             dissipation_ratio=integral / (fit.C_hat * size) ** 2,
                             min_coercivity_ratio=float(np.min(ratios)), mass_drift=mass_drift, delta=delta)
        logger.info("eps=%g seed=%d: lambda=%.4g C=%.3g residual=%.2e", eps, seed, fit.lambda_hat, fit.C_hat,
                    fit.residual)
        return SweepRun(record=record, series=series)
    except (KineticsError, np.linalg.LinAlgError) as e:
        logger.warning("run eps=%g seed=%d failed: %s", eps, seed, e)
        return SweepRun(record=DecayRecord(eps=eps, seed=seed, delta=delta, error=f"{type(e).__name__}: {e}"))


def _run_task(args) -> SweepRun:
    return run_one(*args)


def choose_delta(cfg: HarnessConfig, eps_list: Sequence[float], coercive: bool = True) -> float:
    """Configured delta, or the largest ladder value valid for every eps."""
    if cfg.model.delta is not None:
        return cfg.model.delta
    problems = [build_problem(cfg.override(eps=e).model, cfg.sim) for e in eps_list]
    ensembles = [random_fields(p, cfg.sim.ensemble_size, cfg.sim.seed) for p in problems]
    return select_delta(problems, ensembles, coercive=coercive).delta


@dataclass
class DecayReport:
    """Per-run fits and the eps-uniformity verdict.

    The gate is the uniform lower bound on lambda_hat. The spread max/min is always reported
    and only gates when ``gate_spread`` is set: at small eps the fitted rate saturates at the
    spatial-mode rate while at eps = 1 it is set by the collision rate, so the ratio measures
    the regime more than the estimate.
    """

    records: List[DecayRecord]
    lambda_floor: float
    spread_max: float
    fit_residual_max: float
    gate_spread: bool = False
    series: Dict[Tuple[float, int], pd.DataFrame] = field(default_factory=dict, repr=False)

    @property
    def failures(self) -> List[DecayRecord]:
        return [r for r in self.records if not r.ok]

    def _column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records if r.ok], dtype=float)

    @staticmethod
    def _spread(values: np.ndarray) -> float:
        if values.size == 0 or np.min(values) <= 0.0:
            return float("inf")
        return float(np.max(values) / np.min(values))

    @property
    def lambda_spread(self) -> float:
        return self._spread(self._column("lambda_hat"))

    @property
    def verdict(self) -> Dict[str, bool]:
        lam = self._column("lambda_hat")
        coercivity = self._column("min_coercivity_ratio")
        verdict = {
            "all_runs_completed": not self.failures,
            "lambda_floor": lam.size > 0 and float(np.min(lam)) >= self.lambda_floor,
            "fit_residual": bool(np.all(self._column("fit_residual") <= self.fit_residual_max)),
            "mass_conservation": bool(np.all(self._column("mass_drift") <= MASS_TOL)),
            "coercivity": coercivity.size > 0 and float(np.min(coercivity)) > 0.0,
            "coercivity_spread": self._spread(coercivity) <= self.spread_max,
            "dissipation_bounded": bool(np.all(np.isfinite(self._column("dissipation_integral"))))
                                   and self._spread(self._column("dissipation_integral")) <= self.spread_max,
        }
        if self.gate_spread:
            verdict["lambda_spread"] = self.lambda_spread <= self.spread_max
        return verdict

    @property
    def passed(self) -> bool:
        return all(self.verdict.values())

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.to_dict() for r in self.records])

    def to_dict(self) -> Dict:
        lam = self._column("lambda_hat")
        return {
            "records": [r.to_dict() for r in self.records],
            "lambda_min": float(np.min(lam)) if lam.size else None,
            "lambda_max": float(np.max(lam)) if lam.size else None,
            "lambda_spread": self.lambda_spread,
            "lambda_floor": self.lambda_floor,
            "spread_max": self.spread_max,
            "spread_gated": self.gate_spread,
            "verdict": self.verdict,
            "passed": self.passed,
        }


def run_sweep(cfg: HarnessConfig, eps_list: Optional[Sequence[float]] = None, seeds: Optional[Sequence[int]] = None,
              workers: Optional[int] = None, progress: bool = False) -> DecayReport:
    """Run every (eps, seed) trajectory and gate on eps-uniform decay."""
    cfg.validate()
    sim = cfg.sim
    eps_list = tuple(sim.eps_list if eps_list is None else eps_list)
    seeds = tuple(sim.seeds if seeds is None else seeds)
    workers = sim.workers if workers is None else workers
    delta = choose_delta(cfg, eps_list)
    logger.info("sweep over eps=%s seeds=%s with delta=%g", eps_list, seeds, delta)

    tasks = [(cfg, float(e), int(seed), delta) for e in eps_list for seed in seeds]
    runs: List[SweepRun] = []
    if workers > 1:
        with cf.ProcessPoolExecutor(max_workers=workers) as ex:
            futures = [ex.submit(_run_task, task) for task in tasks]
            for fut in tqdm(cf.as_completed(futures), total=len(futures), desc="sweep", disable=not progress):
                runs.append(fut.result())
    else:
        for task in tqdm(tasks, desc="sweep", disable=not progress):
            runs.append(_run_task(task))

    runs.sort(key=lambda run: (-run.record.eps, run.record.seed))
    report = DecayReport(records=[run.record for run in runs], lambda_floor=sim.lambda_floor,
                         spread_max=sim.spread_max, fit_residual_max=sim.fit_residual_max,
                         gate_spread=sim.gate_spread,
                         series={(run.record.eps, run.record.seed): run.series for run in runs
                                 if run.series is not None})
    if report.failures:
        logger.warning("%d of %d runs failed", len(report.failures), len(runs))
    return report


# invariant suite


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class SuiteLedger:
    checks: List[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failed(self) -> List[str]:
        return [c.name for c in self.checks if not c.passed]

    def add(self, name: str, value: float, threshold: float, passed: Optional[bool] = None, detail: str = "") -> None:
        value = float(value)
        ok = bool(value <= threshold) if passed is None else bool(passed)
        self.checks.append(CheckResult(name, ok, value, float(threshold), detail))

    def run(self, name: str, check: Callable[[], Tuple[float, float, Optional[bool], str]]) -> None:
        """Record ``check()``; any library error fails the check instead of the suite."""
        try:
            value, threshold, passed, detail = check()
        except (KineticsError, np.linalg.LinAlgError) as e:
            self.checks.append(CheckResult(name, False, float("nan"), float("nan"), f"{type(e).__name__}: {e}"))
            return
        self.add(name, value, threshold, passed, detail)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame([c.to_dict() for c in self.checks])

    def to_dict(self) -> Dict:
        return {"passed": self.passed, "failed": self.failed, "checks": [c.to_dict() for c in self.checks]}


def _relative(a: float, b: float) -> float:
    return abs(a) / max(abs(b), 1e-300)


def transport_problem(problem: Problem, nx: int) -> Problem:
    """Same model and velocity grid on ``nx`` cells, without collision matrices.

    Only the transport part and the walls are usable on the result.
    """
    model = problem.model
    xgrid = build_spatial_grid(nx, model.geometry, model.alpha_left, model.alpha_right, problem.xgrid.length)
    if not xgrid.periodic:
        # walls keep their (possibly perturbed) c_M
        xgrid = xgrid.with_walls(problem.xgrid.walls)
    return Problem(model=model, sim=replace(problem.sim, nx=nx), vgrid=problem.vgrid, xgrid=xgrid, M=problem.M,
                   collision=CollisionSet(()))


def _equilibrium_checks(ledger: SuiteLedger, problem: Problem, fields) -> None:
    M = problem.M
    ledger.add("equilibrium_mass", abs(problem.vgrid.integrate(M.values) - 1.0), 1e-12)
    ledger.add("equilibrium_symmetry", float(np.max(np.abs(M.values - M.values[problem.vgrid.pairing]))
                                             / np.max(M.values)), 1e-14)
    worst = 0.0
    for f in fields:
        macro = f.with_values(np.outer(f.rho(), M.values))
        perp = f.with_values(f.perp(M))
        total = weighted_norm_H(f, M) ** 2
        worst = max(worst, _relative(total - weighted_norm_H(macro, M) ** 2 - weighted_norm_H(perp, M) ** 2, total))
    ledger.add("macro_micro_pythagoras", worst, 1e-12)


def _moment_checks(ledger: SuiteLedger, cfg: HarnessConfig, problem: Problem, fields) -> None:
    sim = cfg.sim
    worst = 0.0
    for eps in sim.eps_list:
        for f in fields:
            worst = max(worst, *twisted_identity_residuals(f, eps, problem.M).values())
    ledger.add("twisted_identities", worst, 1e-12)

    def scaling():
        probe = moment_scaling_probe(problem.M, sim.probe_eps, tol=sim.slope_tol, strict=False)
        dev = max(probe.deviations.values())
        return dev, sim.slope_tol, probe.passed, f"exponents {probe.exponents}"

    ledger.run("moment_scaling", scaling)


def _collision_checks(ledger: SuiteLedger, cfg: HarnessConfig, problem: Problem) -> None:
    M, grid = problem.M, problem.vgrid
    ensemble = random_velocity_profiles(M, cfg.sim.ensemble_size, cfg.sim.seed)
    mass, fixed, lam = 0.0, 0.0, np.inf
    for A, _ in problem.collision.groups:
        scale = np.max(np.abs(A.matrix))
        mass = max(mass, float(np.max(np.abs(grid.weights @ A.matrix)) / scale))
        AM = A.apply(M.values)
        fixed = max(fixed, float(np.sqrt(velocity_inner(AM, AM, M) / velocity_inner(M.values, M.values, M))))

    ledger.add("collision_mass", mass, 1e-12)
    ledger.add("collision_equilibrium", fixed, 1e-10)

    def coercivity():
        values = [collision_coercivity(A, M, ensemble) for A, _ in problem.collision.groups]
        return min(values), 0.0, min(values) > 0.0, f"{problem.model.operator_kind}"

    ledger.run("collision_coercivity", coercivity)
    if problem.model.operator_kind == "levy_fp":
        working = problem.collision.cells[0]

        def raw_equilibrium():
            n = max(problem.vgrid.n, LEVY_RESIDUAL_NV)
            if n == problem.vgrid.n:
                raw = working.raw_residual
            else:
                grid = build_velocity_grid(problem.s, cfg.sim.vmax, n, cfg.sim.grading)
                _, diag = levy_fp_generator(problem.s, grid, eval_M2(problem.s, grid), cfg.sim.mass_defect_max)
                raw = diag.raw_residual
            return (raw, LEVY_RESIDUAL_TOL, None,
                    f"nv={n}; working grid nv={problem.vgrid.n}: {working.raw_residual:.2e}")

        ledger.run("levy_raw_equilibrium_residual", raw_equilibrium)
        ledger.add("levy_dissipativity", working.dissipation_defect, 1e-8,
                   detail="top eigenvalue of the symmetric part in l2(1/M), relative")

    def flux_probe():
        A = problem.collision.cells[0]
        probe = collision_flux_probe(A, M, cfg.sim.probe_eps, ensemble, tol=cfg.sim.slope_tol)
        return probe.exponent, probe.expected_floor, probe.passed, "exponent must not fall below s - 1"

    ledger.run("collision_flux_exponent", flux_probe)


def _boundary_checks(ledger: SuiteLedger, problem: Problem, fields, rng: np.random.Generator) -> None:
    M = problem.M
    flux, orth, residual = 0.0, 0.0, 0.0
    for f in fields:
        for trace in reflected_traces(f, M):
            scale = float(np.sum(np.abs(trace.full() * trace.grid.nodes * trace.grid.weights)))
            flux = max(flux, _relative(wall_flux(trace), scale))
            d = replace(trace, plus=D_op(trace, M, trace.wall.c_M), minus=None)
            dp = D_perp(trace, M, trace.wall.c_M)
            orth = max(orth, _relative(boundary_inner(d, dp, M), boundary_inner(trace, trace, M)))
    ledger.add("wall_zero_flux", flux, 1e-12)
    ledger.add("diffusive_orthogonality", orth, 1e-12)

    def decomposition():
        worst = 0.0
        v_scale = 1.0 + rng.uniform()
        for f in fields:
            a, b, c = rng.normal(size=3)
            phi = lambda v: a + b * np.tanh(v / v_scale) + c * np.cos(v)
            alpha = float(rng.uniform())
            for trace in extract_traces(f):
                reflected = apply_reflection(trace, alpha, M, trace.wall.c_M)
                worst = max(worst, boundary_decomposition_residual(phi, reflected, alpha, M, trace.wall.c_M))
        return worst, 1e-10, None, "flux of phi gamma g against its boundary decomposition"

    ledger.run("boundary_decomposition", decomposition)


def _elliptic_checks(ledger: SuiteLedger, problem: Problem, rng: np.random.Generator, count: int) -> None:
    xgrid = problem.xgrid

    def analytic():
        fine = build_spatial_grid(256, xgrid.geometry, 0.0, 0.0, 1.0)
        solver = build_elliptic_solver(fine)
        x = fine.centers
        freq = 2.0 * np.pi if fine.periodic else np.pi
        err = max(float(np.max(np.abs(solver.solve(np.cos(k * freq * x)).u
                                      - np.cos(k * freq * x) / (1.0 + (k * freq) ** 2)))) for k in (1, 2, 3))
        return err, 1e-6, None, "cosine modes at 256 cells"

    ledger.run("elliptic_analytic", analytic)

    solver = build_elliptic_solver(xgrid)
    worst_margin, worst_gain = 0.0, np.inf
    floor = solver.lambda1 / (1.0 + solver.lambda1)
    for _ in range(count):
        eta1 = rng.normal(size=xgrid.nx)
        eta1 -= eta1.mean()
        est = elliptic_estimates(solver, eta1)
        est2 = elliptic_estimates(solver, eta1, rng.normal(size=xgrid.nx))
        for key in ("h1_margin", "poincare_margin", "duality_margin"):
            worst_margin = min(worst_margin, est[key] / est["scale"])
        worst_margin = min(worst_margin, est2["h1_margin"] / est["scale"])
        worst_gain = min(worst_gain, macro_gain(solver, eta1))
    ledger.add("elliptic_bounds", -worst_margin, 1e-12, detail="most negative margin, relative")
    ledger.add("macro_gain", worst_gain, floor, passed=worst_gain >= floor * (1.0 - 1e-12),
               detail="lower bound lambda1/(1+lambda1)")


def _hypocoercive_checks(ledger: SuiteLedger, cfg: HarnessConfig, problem: Problem, delta_override,
                         cm_scale: float) -> None:
    sim = cfg.sim
    problems = [problem if e == problem.eps else build_problem(cfg.override(eps=e).model, sim, cm_scale,
                                                                vgrid=problem.vgrid)
                for e in sim.eps_list]
    ensembles = [random_fields(p, sim.ensemble_size, sim.seed) for p in problems]
    delta = delta_override if delta_override is not None else cfg.model.delta
    if delta is None:
        try:
            delta = select_delta(problems, ensembles, coercive=True).delta
        except DiscretizationError as e:
            ledger.checks.append(CheckResult("delta_selection", False, float("nan"), float("nan"), str(e)))
            return

    def equivalence():
        lo, hi = norm_equivalence(problems, ensembles, delta)
        return max(1.0 - lo, hi - 1.0), 0.5, lo >= 0.5 and hi <= 1.5, f"delta={delta:g}, ratio range [{lo:.4f}, {hi:.4f}]"

    ledger.run("norm_equivalence", equivalence)

    def coercivity():
        per_eps = []
        for p, ens in zip(problems, ensembles):
            norm = HypoNorm.for_problem(p, delta)
            per_eps.append(min(coercivity_functional(f, p, norm).ratio for f in ens))
        c = np.array(per_eps)
        spread = float(c.max() / c.min()) if c.min() > 0.0 else float("inf")
        return float(c.min()), 0.0, bool(c.min() > 0.0 and spread <= sim.spread_max), \
            f"delta={delta:g}, per-eps minimum {np.round(c, 6).tolist()}, spread {spread:.3g}"

    ledger.run("hypocoercivity", coercivity)


def _dissipation_check(ledger: SuiteLedger, problem: Problem) -> None:
    def refinement():
        defects = []
        for nx in DISSIPATION_NX:
            p = transport_problem(problem, nx)
            defects.append(abs(dissipation_identity(admissible_smooth_field(p), p).defect))
        orders = [defects[i] / defects[i + 1] for i in range(2)]
        worst = max(abs(r - 2.0) / 2.0 for r in orders)
        return worst, 0.2, None, f"defects {defects}, reduction factors {orders}"

    ledger.run("dissipation_first_order", refinement)


def _evolution_checks(ledger: SuiteLedger, problem: Problem, seed: int) -> None:
    sim = problem.sim

    def fixed_point():
        eq = problem.equilibrium_field()
        state = initial_state(problem, eq.values)
        for _ in range(100):
            state = step(state, sim.dt)
        return weighted_norm_H(state.f.with_values(state.f.values - eq.values), problem.M) \
            / weighted_norm_H(eq, problem.M), 1e-10, None, "100 steps from M"

    ledger.run("equilibrium_fixed_point", fixed_point)

    def mass():
        f0 = initial_field("random", problem, seed)
        state = initial_state(problem, f0.values)
        n = 50
        drift = 0.0
        for _ in range(n):
            state = step(state, sim.dt)
            drift = max(drift, abs(problem.mass(state.f.values) - state.conserved_mass))
        return drift / (weighted_norm_H(f0, problem.M) * n * sim.dt), MASS_TOL, None, "per unit time"

    ledger.run("mass_conservation", mass)


def run_invariant_suite(cfg: HarnessConfig, cm_scale: float = 1.0, delta: Optional[float] = None,
                        progress: bool = False) -> SuiteLedger:
    """Every structural check on one configuration; ``cm_scale`` and ``delta`` inject faults."""
    cfg.validate()
    sim = cfg.sim
    ledger = SuiteLedger()
    problem = build_problem(cfg.model, sim, cm_scale=cm_scale)
    fields = random_fields(problem, sim.ensemble_size, sim.seed)
    rng = np.random.default_rng(sim.seed)

    stages = [
        ("equilibrium", lambda: _equilibrium_checks(ledger, problem, fields)),
        ("moments", lambda: _moment_checks(ledger, cfg, problem, fields)),
        ("collision", lambda: _collision_checks(ledger, cfg, problem)),
        ("boundary", lambda: _boundary_checks(ledger, problem, fields, rng) if not problem.xgrid.periodic else None),
        ("elliptic", lambda: _elliptic_checks(ledger, problem, rng, sim.ensemble_size)),
        ("hyponorm", lambda: _hypocoercive_checks(ledger, cfg, problem, delta, cm_scale)),
        ("dissipation", lambda: _dissipation_check(ledger, problem)),
        ("evolution", lambda: _evolution_checks(ledger, problem, sim.seed)),
    ]
    for name, stage in tqdm(stages, desc="checks", disable=not progress):
        logger.info("invariant stage %s", name)
        stage()
    logger.info("invariant suite: %d checks, failed: %s", len(ledger.checks), ledger.failed or "none")
    return ledger
