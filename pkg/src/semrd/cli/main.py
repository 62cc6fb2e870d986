"""Command-line entry point ``semrd``."""

from __future__ import annotations

import sys
from pathlib import Path

import click
import yaml

from ..exceptions import ConfigError, ParseError, SemRDError
from ..sources import gaussian_benchmark, sample_gaussian, write_samples
from .points import verify as verify_points
from .runner import EXIT_CONFIG, _gaussian_spec, run as run_config


@click.group()
@click.version_option(package_name="artifact")
def cli():
    """Semantic rate-distortion surfaces: solve, estimate, audit."""


@cli.command()
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--seed", type=int, default=None, help="Override the seed in the config.")
def run(config, seed):
    """Execute CONFIG; exit 0 on success, 2 if some grid points failed, 1 on config errors.

    The worker count comes from the config unless SEMRD_WORKERS is set.
    """
    outcome = run_config(config, seed=seed)
    stream = sys.stderr if outcome.exit_code == EXIT_CONFIG else sys.stdout
    click.echo(outcome.message, file=stream)
    if outcome.out_dir is not None:
        click.echo(f"output: {outcome.out_dir}")
    sys.exit(outcome.exit_code)


@cli.command()
@click.argument("points", type=click.Path(dir_okay=False))
@click.option("--eps", type=float, default=1e-6, show_default=True, help="Tolerance in bits.")
def verify(points, eps):
    """Audit a points file: nonnegativity, monotonicity, bounds, achievability."""
    try:
        report = verify_points(points, eps)
    except ParseError as exc:
        click.echo(f"parse error: {exc}", err=True)
        sys.exit(1)
    for line in report.lines():
        click.echo(line)
    sys.exit(0 if report.passed else 1)


@cli.command("gaussian-gen")
@click.argument("spec")
@click.argument("out", type=click.Path(dir_okay=False))
@click.option("--n1", type=int, default=1000, show_default=True, help="Observations.")
@click.option("--n2", type=int, default=1, show_default=True, help="Semantic samples per observation.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--format", "fmt", type=click.Choice(["csv", "jsonl"]), default=None, help="Default: from OUT's suffix.")
def gaussian_gen(spec, out, n1, n2, seed, fmt):
    """Sample the joint Gaussian source in SPEC (a YAML/JSON file with k_x, h, k_w, or 'benchmark') to OUT."""
    try:
        if spec == "benchmark":
            source = gaussian_benchmark(seed)
        else:
            source = _gaussian_spec(yaml.safe_load(Path(spec).read_text(encoding="utf-8")), "spec", seed)
        rows = write_samples(out, sample_gaussian(source, n1, n2, seed=seed), fmt)
    except (OSError, yaml.YAMLError, ConfigError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    except (SemRDError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(f"wrote {rows} rows to {out}")


if __name__ == "__main__":
    cli()
