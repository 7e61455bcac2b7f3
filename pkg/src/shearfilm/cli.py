"""Command line interface: ``shearfilm simulate|sweep-sigma|fit|verify``.

Exit codes: 0 success, 2 configuration error, 3 solver error, 4 failed check.
"""

from __future__ import annotations

import json
import logging
import sys

import click

from . import __version__
from .diagnostics import fit_decay
from .errors import ConfigError, ShearFilmError
from .experiments import (
    EXIT_CHECK, EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, load_config, output_directory, read_series,
    prepare_directory, run_experiment, sweep_sigma,
)
from .verify import run_checks


def _fail(msg: str, code: int):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


@click.group()
@click.version_option(__version__)
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool):
    """Shear-flow free-surface simulator and diagnostics."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--output-dir", "-o", default=None, help="Override the configured output directory.")
@click.option("--overwrite", is_flag=True, help="Clear a non-empty output directory first.")
def simulate(config, output_dir, overwrite):
    """Run the experiment described by CONFIG (JSON)."""
    try:
        cfg = load_config(config)
        res = run_experiment(cfg, output_dir, overwrite)
    except ConfigError as exc:
        _fail(str(exc), EXIT_CONFIG)
    except ShearFilmError as exc:
        _fail(str(exc), EXIT_SOLVER)
    term = res.summary.get("termination", {})
    click.echo(f"{res.directory}: {term.get('status', 'done')}")
    sys.exit(res.status)


@main.command("sweep-sigma")
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--sigmas", required=True, help="Comma-separated list ending with 0, e.g. 1,0.1,0.01,0.")
@click.option("--output-dir", "-o", default=None)
@click.option("--overwrite", is_flag=True)
def sweep_sigma_cmd(config, sigmas, output_dir, overwrite):
    """Vanishing surface tension sweep: distance of each run to the sigma = 0 run."""
    try:
        values = [float(s) for s in sigmas.split(",") if s.strip()]
    except ValueError:
        _fail(f"cannot parse --sigmas {sigmas!r}", EXIT_CONFIG)
    try:
        cfg = load_config(config)
        if not values or values[-1] != 0 or any(v < 0 for v in values):
            raise ConfigError("--sigmas must be non-negative and end with 0")
        directory = output_directory(cfg, output_dir)
        prepare_directory(directory, overwrite)
        res = sweep_sigma(cfg, values, directory)
    except ConfigError as exc:
        _fail(str(exc), EXIT_CONFIG)
    except ShearFilmError as exc:
        _fail(str(exc), EXIT_SOLVER)
    for row in res.summary["table"]:
        click.echo(f"sigma={row['sigma']:g} delta={row['delta']:.6e}")
    click.echo(f"strictly decreasing: {res.summary['strictly_decreasing']}")
    sys.exit(res.status)


@main.command()
@click.argument("csv_path", type=click.Path(dir_okay=False))
@click.option("--model", type=click.Choice(["exp", "alg"]), default="exp")
@click.option("--column", default="E", help="Diagnostics column to fit.")
@click.option("--t-min", default=0.0, type=float, help="Discard samples before this time.")
def fit(csv_path, model, column, t_min):
    """Fit exponential or algebraic decay to a diagnostics column."""
    try:
        t, v = read_series(csv_path, column)
        result = fit_decay(t, v, model=model, t_min=t_min)
    except (ConfigError, OSError) as exc:
        _fail(str(exc), EXIT_CONFIG)
    except ValueError as exc:
        _fail(str(exc), EXIT_CHECK)
    click.echo(json.dumps(result, sort_keys=True))
    sys.exit(EXIT_OK)


@main.command()
def verify():
    """Run the fast invariant suite; exit 4 if any check fails."""
    try:
        checks = run_checks()
    except ShearFilmError as exc:
        _fail(str(exc), EXIT_SOLVER)
    for c in checks:
        click.echo(c.line())
    sys.exit(EXIT_OK if all(c.passed for c in checks) else EXIT_CHECK)


if __name__ == "__main__":
    main()
