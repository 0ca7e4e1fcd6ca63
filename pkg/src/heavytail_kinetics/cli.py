#!/usr/bin/env python3
"""Command-line entry point: simulate, sweep, check and moments."""

import functools
import logging
import sys

import click
import numpy as np

from .config import HarnessConfig, load_config
from .errors import KineticsError
from .evolution import build_equilibrium, build_problem, evolve_and_record, initial_field, initial_state
from .harness import choose_delta, dissipation_integral, fit_decay, run_invariant_suite, run_sweep
from .macro import moment_scaling_probe
from .outputs import (dump_problem, prepare_output_dir, run_dir_name, run_metadata, save_frame, series_filename,
                      write_json)

logger = logging.getLogger(__name__)

RULE = "=" * 62


def _banner(title):
    click.echo(f"\n{RULE}")
    click.echo(title.upper())
    click.echo(RULE)


def _fail(message):
    click.echo(f"ERROR: {message}", err=True)
    sys.exit(1)


def config_options(f):
    """Options shared by every command; each overrides the config file."""
    options = [
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
                     help="JSON configuration file (nested model/sim or flat keys)"),
        click.option("--operator", "operator_kind", type=click.Choice(["bgk", "boltzmann", "levy_fp"]), default=None,
                     help="Collision operator"),
        click.option("--geometry", type=click.Choice(["slab", "torus"]), default=None, help="Spatial domain"),
        click.option("--s", "s", type=float, default=None, help="Tail exponent s in (0, 1)"),
        click.option("--alpha", type=float, default=None, help="Accommodation coefficient at both walls"),
        click.option("--nx", type=int, default=None, help="Spatial cells"),
        click.option("--nv", type=int, default=None, help="Velocity nodes (even)"),
        click.option("--vmax", type=float, default=None, help="Velocity cutoff"),
        click.option("--dt", type=float, default=None, help="Time step"),
        click.option("--T", "T", type=float, default=None, help="Final time"),
        click.option("--delta", type=float, default=None, help="Fix delta instead of selecting it"),
        click.option("--out-dir", default=None, help="Directory for CSV/JSON outputs (nothing is written without it)"),
        click.option("--save-parquet", is_flag=True, help="Also write time series as Parquet"),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def resolve_config(config_path=None, alpha=None, **overrides) -> HarnessConfig:
    cfg = load_config(config_path) if config_path else HarnessConfig()
    if alpha is not None:
        overrides.update(alpha_left=alpha, alpha_right=alpha)
    return cfg.override(**overrides).validate()


def handle_errors(f):
    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except KineticsError as e:
            _fail(f"{type(e).__name__}: {e}")
    return wrapper


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Debug logging")
@click.option("--quiet", "-q", is_flag=True, help="No progress bars, warnings only")
@click.pass_context
def main(ctx, verbose, quiet):
    """Heavy-tailed linear kinetic equations: decay runs and structural checks."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    ctx.ensure_object(dict)
    ctx.obj["progress"] = not quiet


@main.command()
@config_options
@click.option("--eps", type=float, default=None, help="Scaling parameter eps in (0, 1]")
@click.option("--seed", type=int, default=None, help="Seed of random initial data")
@click.option("--initial", type=click.Choice(["macro", "micro", "mixed", "random"]), default=None,
              help="Initial data kind")
@click.option("--dump", is_flag=True, help="Dump grids, collision matrices and wall traces")
@click.pass_context
@handle_errors
def simulate(ctx, config_path, eps, seed, initial, out_dir, save_parquet, dump, **options):
    """Evolve one trajectory and fit its decay rate."""
    cfg = resolve_config(config_path, eps=eps, seed=seed, initial=initial, **options)
    sim = cfg.sim
    problem = build_problem(cfg.model, sim)
    delta = choose_delta(cfg, [cfg.model.eps])
    f0 = initial_field(sim.initial, problem, sim.seed)

    click.echo(f"Running {cfg.model.operator_kind} on the {cfg.model.geometry}: s={cfg.model.s:g}, "
               f"eps={cfg.model.eps:g}, nx={sim.nx}, nv={sim.nv}, dt={sim.dt:g}, T={sim.T:g}, delta={delta:g}")
    series = evolve_and_record(initial_state(problem, f0.values), sim.T, sim.dt, sim.record_every, delta=delta,
                               progress=ctx.obj["progress"])
    fit = fit_decay(series, sim.fit_window, sim.fit_floor)
    integral = dissipation_integral(series, sim.dissipation_rate_fraction * fit.lambda_hat, cfg.model.eps, cfg.model.s)

    _banner("decay fit")
    click.echo(f"{'lambda_hat':<24} {fit.lambda_hat:>14.6g}")
    click.echo(f"{'C_hat':<24} {fit.C_hat:>14.6g}")
    click.echo(f"{'fit residual':<24} {fit.residual:>14.3e}")
    click.echo(f"{'dissipation integral':<24} {integral:>14.6g}")
    click.echo(f"{'final H norm':<24} {series['H_norm'].iloc[-1]:>14.6e}")
    click.echo(f"{'mass drift':<24} {abs(series['mass'].iloc[-1] - series['mass'].iloc[0]):>14.3e}")

    if out_dir:
        run_dir = prepare_output_dir(out_dir, run_dir_name(cfg, "simulate"))
        save_frame(series, run_dir / series_filename(cfg.model.eps, sim.seed), save_parquet)
        meta = run_metadata(cfg, problem)
        meta["fit"] = {"lambda_hat": fit.lambda_hat, "C_hat": fit.C_hat, "residual": fit.residual,
                       "window": fit.window, "dissipation_integral": integral, "delta": delta}
        write_json(run_dir / "run.json", meta)
        if dump:
            dump_problem(problem, run_dir, f0)
        click.echo(f"\nSaved run to: {run_dir}")


@main.command()
@config_options
@click.option("--eps", "eps_list", type=float, multiple=True, help="eps values (repeatable)")
@click.option("--seed", "seeds", type=int, multiple=True, help="Seeds (repeatable)")
@click.option("--workers", type=int, default=None, help="Worker processes")
@click.option("--gate-spread", is_flag=True, help="Also fail when max/min lambda_hat exceeds spread_max")
@click.pass_context
@handle_errors
def sweep(ctx, config_path, eps_list, seeds, workers, gate_spread, out_dir, save_parquet, **options):
    """Run the eps x seed grid and gate on eps-uniform decay."""
    cfg = resolve_config(config_path, eps_list=eps_list or None, seeds=seeds or None, workers=workers,
                         gate_spread=gate_spread or None, **options)
    report = run_sweep(cfg, progress=ctx.obj["progress"])

    _banner("eps sweep")
    click.echo(f"{'eps':>9} {'seed':>5} {'lambda_hat':>11} {'C_hat':>9} {'residual':>9} {'diss_int':>10} "
               f"{'min_c':>9}")
    click.echo("-" * 62)
    for r in report.records:
        if r.ok:
            click.echo(f"{r.eps:>9.5g} {r.seed:>5} {r.lambda_hat:>11.5g} {r.C_hat:>9.4g} {r.fit_residual:>9.2e} "
                       f"{r.dissipation_integral:>10.4g} {r.min_coercivity_ratio:>9.3g}")
        else:
            click.echo(f"{r.eps:>9.5g} {r.seed:>5}  FAILED: {r.error}")
    click.echo("-" * 62)
    gated = "gated" if report.gate_spread else "reported only"
    click.echo(f"{'lambda spread':<24} {report.lambda_spread:>8.3g}  ({gated}, max {report.spread_max:g})")
    for name, ok in report.verdict.items():
        click.echo(f"{name:<24} {'PASS' if ok else 'FAIL'}")

    if out_dir:
        run_dir = prepare_output_dir(out_dir, run_dir_name(cfg, "sweep"))
        for (eps, seed), series in sorted(report.series.items(), key=lambda kv: (-kv[0][0], kv[0][1])):
            save_frame(series, run_dir / series_filename(eps, seed), save_parquet)
        save_frame(report.frame(), run_dir / "records.csv")
        write_json(run_dir / "sweep_report.json", {**report.to_dict(), "metadata": run_metadata(cfg)})
        click.echo(f"\nSaved sweep to: {run_dir}")
    if not report.passed:
        sys.exit(1)


@main.command()
@config_options
@click.option("--eps", type=float, default=None, help="eps of the base problem")
@click.option("--perturb-cm", type=float, default=1.0, help="Scale the discrete c_M (fault injection)")
@click.pass_context
@handle_errors
def check(ctx, config_path, eps, perturb_cm, delta, out_dir, save_parquet, **options):
    """Run the invariant suite and write a pass/fail ledger."""
    cfg = resolve_config(config_path, eps=eps, **options)
    ledger = run_invariant_suite(cfg, cm_scale=perturb_cm, delta=delta, progress=ctx.obj["progress"])

    _banner("invariant suite")
    click.echo(f"{'check':<32} {'value':>11} {'threshold':>11}  status")
    click.echo("-" * 62)
    for c in ledger.checks:
        click.echo(f"{c.name:<32} {c.value:>11.3e} {c.threshold:>11.3e}  {'PASS' if c.passed else 'FAIL'}")
        if not c.passed and c.detail:
            click.echo(f"    {c.detail}")
    click.echo(RULE)
    click.echo(f"{len(ledger.checks) - len(ledger.failed)}/{len(ledger.checks)} checks passed")

    if out_dir:
        run_dir = prepare_output_dir(out_dir, run_dir_name(cfg, "check"))
        write_json(run_dir / "invariant_ledger.json",
                   {**ledger.to_dict(), "cm_scale": perturb_cm, "metadata": run_metadata(cfg)})
        click.echo(f"\nSaved ledger to: {run_dir}")
    if not ledger.passed:
        sys.exit(1)


@main.command()
@config_options
@click.option("--eps", "probe_eps", type=float, multiple=True, help="eps values of the probe (repeatable)")
@handle_errors
def moments(config_path, probe_eps, out_dir, save_parquet, **options):
    """Fit the eps-exponents of the twisted moment estimates."""
    options.pop("delta", None)
    cfg = resolve_config(config_path, probe_eps=probe_eps or None, **options)
    M = build_equilibrium(cfg.model, cfg.sim)
    probe = moment_scaling_probe(M, cfg.sim.probe_eps, tol=cfg.sim.slope_tol, strict=False)

    _banner(f"moment scaling, s = {probe.s:g}")
    click.echo(f"{'quantity':<12} {'exponent':>10} {'expected':>10} {'deviation':>10}  status")
    click.echo("-" * 62)
    for key, expected in probe.expected.items():
        dev = probe.deviations[key]
        click.echo(f"{key:<12} {probe.exponents[key]:>10.4f} {expected:>10.4f} {dev:>10.4f}  "
                   f"{'PASS' if dev <= probe.tol else 'FAIL'}")

    if out_dir:
        run_dir = prepare_output_dir(out_dir, run_dir_name(cfg, "moments"))
        save_frame(probe.constants, run_dir / "moment_constants.csv", save_parquet)
        write_json(run_dir / "moment_exponents.json",
                   {"s": probe.s, "eps": list(probe.eps), "exponents": probe.exponents, "expected": probe.expected,
                    "tol": probe.tol, "passed": probe.passed, "min_M": float(np.min(M.values))})
        click.echo(f"\nSaved moments to: {run_dir}")
    if not probe.passed:
        sys.exit(1)


if __name__ == "__main__":
    main()
