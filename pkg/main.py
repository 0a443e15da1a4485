"""
SteinForge command line.

    python main.py run <config.yaml> [--out DIR] [--seed N] [--overwrite] [--resume CHECKPOINT]
    python main.py check [--seed N] [--out DIR] [--overwrite]
    python main.py sample <checkpoint.json> --n N [--seed N] [--label K] [--out PATH] [--overwrite]
"""
import json
import sys
from pathlib import Path

import click
from dotenv import load_dotenv

from config import settings, validate_environment
from core.exceptions import (
    EXIT_CHECK_FAILED,
    EXIT_OK,
    ConfigValidationError,
    OutputError,
    SteinForgeError,
    exit_code_for,
)
from core.logging_config import get_logger
from models.config_models import load_config, parse_config

logger = get_logger(__name__)

load_dotenv()


def _fail(exc: BaseException) -> None:
    code = exit_code_for(exc)
    click.echo(f"error: {exc}", err=True)
    if isinstance(exc, ConfigValidationError) and exc.offending:
        click.echo("offending keys: " + ", ".join(exc.offending), err=True)
    logger.error("command_failed error_type=%s exit_code=%d", type(exc).__name__, code)
    sys.exit(code)


def _print_check_table(results: dict) -> None:
    click.echo(f"{'check':<28} {'status':<8} {'value':>12} {'threshold':>12}")
    for name, row in results["checks"].items():
        if row["status"] == "error":
            click.echo(f"{name:<28} {'error':<8} {row['error']}")
            continue
        click.echo(f"{name:<28} {row['status']:<8} {row['value']:>12.3e} {row['threshold']:>12.3e}")
    click.echo(f"overall: {results['status']}")


@click.group()
def cli():
    """Stein variational sampling, amortized samplers and SteinGAN."""
    try:
        validate_environment()
    except ConfigValidationError as e:
        _fail(e)


@cli.command()
@click.argument("config_path", type=click.Path(dir_okay=False))
@click.option("--out", "out_dir", default=None, help="Run directory (default: output root / config name).")
@click.option("--seed", type=int, default=None, help="Override the config's root seed.")
@click.option("--overwrite", is_flag=True, help="Reuse a non-empty run directory.")
@click.option("--resume", "resume_from", type=click.Path(dir_okay=False), default=None,
              help="Continue a steingan run from one of its checkpoints.")
def run(config_path, out_dir, seed, overwrite, resume_from):
    """Run the experiment described by CONFIG_PATH."""
    from services.experiment_service import ExperimentService

    try:
        cfg = load_config(config_path)
        if seed is not None:
            cfg = parse_config({**cfg.model_dump(mode="json", exclude_none=True), "seed": seed})
        summary = ExperimentService(cfg, out_dir, overwrite, resume_from).run()
    except (SteinForgeError, OSError) as e:
        _fail(e)
    if cfg.mode == "check":
        _print_check_table(summary)
        sys.exit(EXIT_OK if summary["status"] == "passed" else EXIT_CHECK_FAILED)
    click.echo(f"run finished: {summary['run_dir']}")
    sys.exit(EXIT_OK)


@cli.command()
@click.option("--seed", type=int, default=None, help="Seed for the randomized checks.")
@click.option("--out", "out_dir", default=None, help="Also write checks.json into this directory.")
@click.option("--overwrite", is_flag=True, help="Reuse a non-empty output directory.")
def check(seed, out_dir, overwrite):
    """Run the built-in self-checks and print a pass/fail table."""
    from services.check_service import CheckService
    from services.output_service import OutputService

    seed = settings.default_seed if seed is None else seed
    try:
        results = CheckService(seed).run_all()
        if out_dir:
            output = OutputService(out_dir, overwrite)
            output.prepare()
            output.write_text("checks.json", json.dumps(results, indent=2, sort_keys=True, default=str))
    except (SteinForgeError, OSError) as e:
        _fail(e)
    _print_check_table(results)
    sys.exit(EXIT_OK if results["status"] == "passed" else EXIT_CHECK_FAILED)


@cli.command()
@click.argument("checkpoint_path", type=click.Path(dir_okay=False))
@click.option("--n", "n", type=int, required=True, help="Number of samples.")
@click.option("--seed", type=int, default=None, help="Noise seed.")
@click.option("--label", type=int, default=None, help="Class label for conditional generators.")
@click.option("--out", "out_path", default=None, help="Output file stem (.csv or .pgm is appended).")
@click.option("--overwrite", is_flag=True, help="Replace an existing sample file.")
def sample(checkpoint_path, n, seed, label, out_path, overwrite):
    """Draw N samples from the generator stored in CHECKPOINT_PATH."""
    from services.experiment_service import sample_from_checkpoint
    from services.output_service import write_samples

    seed = settings.default_seed if seed is None else seed
    if out_path is None:
        suffix = "" if label is None else f"_label{label}"
        out_path = str(Path(checkpoint_path).parent / f"sample_seed{seed}{suffix}")
    try:
        samples, image_shape = sample_from_checkpoint(checkpoint_path, n, seed, label)
        target = Path(out_path).with_suffix(".pgm" if image_shape else ".csv")
        if target.exists() and not overwrite:
            raise OutputError(f"{target} already exists; pass --overwrite to replace it")
        written = write_samples(samples, out_path, image_shape)
    except (SteinForgeError, OSError) as e:
        _fail(e)
    click.echo(f"wrote {n} samples to {written}")
    sys.exit(EXIT_OK)


if __name__ == "__main__":
    cli()
