"""Command line entry points.

Exit codes: 0 success, 2 configuration error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from . import errors as err
from .config import PipelineConfig
from .pipeline import STAGES, run
from .synth import SynthConfig, make_synthetic

NUMERICAL_ERRORS = (err.NotConverged, err.Singular, err.DegenerateYear,
                    err.DegenerateDenominator, err.DimensionTooLarge)

STAGE_NAMES = [s.name for s in STAGES] + ["all"]


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
def main(verbose):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")


@main.command("run")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--stage", default="all", type=click.Choice(STAGE_NAMES),
              show_default=True)
@click.option("--force", is_flag=True,
              help="Rerun even if input hashes are unchanged.")
@click.option("--seed", type=int, default=None,
              help="Override the configured seed.")
def run_cmd(config_path, stage, force, seed):
    """Run one pipeline stage (or all of them) against a config file."""
    try:
        config = PipelineConfig.from_file(config_path, seed_override=seed)
    except err.ConfigInvalid as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    try:
        run(stage, config, force=force)
    except err.ConfigInvalid as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    except NUMERICAL_ERRORS as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        sys.exit(4)
    except err.EarnsignalError as exc:
        click.echo(f"data error: {exc}", err=True)
        sys.exit(3)


def _stage_command(stage_name):
    @main.command(stage_name)
    @click.option("--config", "config_path", required=True,
                  type=click.Path(exists=True, dir_okay=False))
    @click.option("--force", is_flag=True)
    @click.option("--seed", type=int, default=None)
    @click.pass_context
    def cmd(ctx, config_path, force, seed):
        ctx.invoke(run_cmd, config_path=config_path, stage=stage_name,
                   force=force, seed=seed)
    cmd.help = f"Run the {stage_name} stage (alias for run --stage {stage_name})."


for _name in STAGE_NAMES:
    _stage_command(_name)


@main.command("synth")
@click.option("--out", "out_dir", required=True,
              type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--years", default="2005-2012", show_default=True,
              help="Inclusive year range, e.g. 2005-2012.")
@click.option("--docs-per-year", type=int, default=2000, show_default=True)
@click.option("--topics", type=int, default=8, show_default=True,
              help="Planted topic count; also sets the model topic count.")
def synth_cmd(out_dir, seed, years, docs_per_year, topics):
    """Generate a planted-truth dataset plus a ready-to-run config.yaml."""
    try:
        y0, y1 = (int(y) for y in years.split("-"))
    except ValueError:
        click.echo(f"config error: bad year range {years!r}", err=True)
        sys.exit(2)
    out = Path(out_dir).resolve()
    cfg = SynthConfig(out_dir=out / "input", year_start=y0, year_end=y1,
                      docs_per_year=docs_per_year, n_true_topics=topics,
                      seed=seed)
    make_synthetic(cfg)
    pipe = PipelineConfig(
        input_dir=out / "input", out_dir=out / "out",
        year_start=y0, year_end=y1, seed=seed,
        taxonomy_path=out / "input" / "taxonomy.json")
    pipe.olda.n_topics = topics
    pipe.vocab.min_df = 2
    pipe.save(out / "config.yaml")
    click.echo(f"wrote synthetic dataset and {out / 'config.yaml'}")


if __name__ == "__main__":
    main()
