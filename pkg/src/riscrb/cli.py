"""Command-line entry point (``riscrb``)."""

from __future__ import annotations

import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import click

from . import harness, manifold
from .config import load_config
from .errors import RiscrbError
from .scene import build_scene, describe

GRADIENT_CHOICES = {"exact": "exact", "paper": "paper_qq_only"}


def _common(fn):
    opts = [
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                     help="TOML experiment file."),
        click.option("--seed", type=int, default=None, help="Random seed for the initial profile."),
        click.option("--out", type=click.Path(file_okay=False), default="out", show_default=True,
                     help="Output directory."),
        click.option("--no-accel", is_flag=True, help="Disable nonlinear acceleration."),
        click.option("--emi-unaware", is_flag=True,
                     help="Design with thermal noise only (results still evaluated under EMI)."),
        click.option("--gradient-mode", type=click.Choice(sorted(GRADIENT_CHOICES)), default=None),
        click.option("--jobs", type=int, default=None, help="Worker processes for cold-start sweeps."),
        click.option("-v", "--verbose", is_flag=True),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def build_spec(kind, config_path=None, seed=None, no_accel=False, emi_unaware=False,
               gradient_mode=None, jobs=None, **extra):
    """Reference spec for ``kind`` overlaid with the config file and flags."""
    kw = {}
    if config_path:
        loaded = load_config(config_path)
        kw.update(loaded["experiment"])
        kw.pop("kind", None)
        if loaded["scene"] is not None:
            kw["scene"] = loaded["scene"]
        kw["optimizer"] = loaded["optimizer"]
    if seed is not None:
        kw["seed"] = seed
    if gradient_mode is not None:
        kw["gradient_mode"] = GRADIENT_CHOICES[gradient_mode]
    if jobs is not None:
        kw["jobs"] = jobs
    if emi_unaware:
        kw["design_emi_aware"] = False
    kw.update(extra)
    try:
        spec = harness.default_spec(kind, **kw)
    except TypeError as exc:
        raise RiscrbError(f"[experiment] {exc}") from None
    if no_accel:
        spec = replace(spec, optimizer=replace(spec.optimizer, acceleration_enabled=False))
    return spec


def _setup(verbose):
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


def _run(fn):
    try:
        return fn()
    except RiscrbError as exc:
        raise click.ClickException(str(exc)) from None


@click.group()
@click.version_option(harness.__version__)
def main():
    """Localization error bounds and RIS phase design under EMI."""


@main.command()
@_common
def solve(out, verbose, **kw):
    """Optimize one phase profile; writes w.csv and trace.csv."""
    _setup(verbose)

    def go():
        spec = build_spec("solve", **kw)
        res = harness.run_solve(spec)
        outdir = Path(out)
        harness.emit(harness.trace_records(res.run), harness.TRACE_FIELDS, outdir / "trace.csv", spec)
        manifold.write_csv(res.run.w, outdir / "w.csv")
        click.echo(f"status={res.run.status} iterations={res.run.iterations} rcrb={res.rcrb!r}")

    _run(go)


@main.command()
@_common
def trace(out, verbose, **kw):
    """Accelerated and plain convergence traces from one start."""
    _setup(verbose)

    def go():
        spec = build_spec("trace", **kw)
        res = harness.run_trace(spec)
        outdir = Path(out)
        gp = ("iteration", ["rcrb"])
        harness.emit(harness.trace_records(res.accelerated), harness.TRACE_FIELDS,
                     outdir / "trace_accelerated.csv", spec, gnuplot=gp)
        harness.emit(harness.trace_records(res.plain), harness.TRACE_FIELDS,
                     outdir / "trace_plain.csv", spec, gnuplot=gp)
        (outdir / "trace_summary.json").write_text(json.dumps(res.summary, indent=2, sort_keys=True) + "\n")
        click.echo(json.dumps(res.summary, sort_keys=True))

    _run(go)


def _sweep(kind, out, verbose, cold, **kw):
    _setup(verbose)

    def go():
        spec = build_spec(kind, **kw)
        if cold:
            spec = replace(spec, warm_start=False)
        rows = harness.run_sweep(spec)
        path = Path(out) / f"{kind}.csv"
        harness.emit((r.as_record() for r in rows), harness.SweepRow.CSV_FIELDS, path, spec,
                     gnuplot=("x", ["rcrb_emi_aware", "rcrb_emi_unaware", "rcrb_random"]))
        for r in rows:
            click.echo(f"x={r.x:g} N={r.n_elements} aware={r.rcrb_emi_aware:.6e} "
                       f"unaware={r.rcrb_emi_unaware:.6e} random={r.rcrb_random:.6e} {r.status}")
        xs = [r.x for r in rows]
        click.echo(f"spearman={harness.spearman(xs, [r.rcrb_emi_aware for r in rows]):.4f}")

    _run(go)


@main.command("sweep-distance")
@_common
@click.option("--cold", is_flag=True, help="Start every row from the seeded random profile.")
def sweep_distance(out, verbose, cold, **kw):
    """RCRB versus agent height d for q = (0, 0, d)."""
    _sweep("sweep_distance", out, verbose, cold, **kw)


@main.command("sweep-size")
@_common
@click.option("--cold", is_flag=True, help="Accepted for symmetry; size rows always start cold.")
def sweep_size(out, verbose, cold, **kw):
    """RCRB versus square plate side a = b."""
    _sweep("sweep_size", out, verbose, cold, **kw)


@main.command("mle-check")
@_common
@click.option("--trials", type=int, default=None, help="Monte-Carlo trials (default 500).")
def mle_check(out, verbose, trials, **kw):
    """Monte-Carlo RMSE of a grid-search estimator next to the RCRB."""
    _setup(verbose)

    def go():
        extra = {"mc_trials": trials} if trials else {}
        spec = build_spec("mle_check", **kw, **extra)
        rep = harness.mle_check(spec)
        rec = rep.as_record()
        harness.emit([rec], tuple(rec), Path(out) / "mle_check.csv", spec)
        click.echo(" ".join(f"{k}={v!r}" for k, v in rec.items()))

    _run(go)


@main.command()
@click.option("--seed", type=int, default=0, show_default=True)
def validate(seed):
    """Finite-difference and brute-force oracle checks on a small random scene."""
    results = _run(lambda: harness.validate(seed))
    ok = True
    for name, (err, tol, passed) in results.items():
        ok &= passed
        click.echo(f"{name:9s} max_rel_err={err:.3e} tol={tol:.0e} {'PASS' if passed else 'FAIL'}")
    sys.exit(0 if ok else 1)


@main.group()
def scene():
    """Scene inspection."""


@scene.command("dump")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
def scene_dump(config_path):
    """Print element count, pitch, wavelength and distance summaries."""

    def go():
        spec = build_spec("solve", config_path=config_path)
        click.echo(describe(build_scene(spec.scene)))

    _run(go)


if __name__ == "__main__":
    main()
