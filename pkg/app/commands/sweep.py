"""
sweep: run an experiment template over a parameter grid
"""
import click
from loguru import logger

from app.errors import ConfigError
from app.experiments import SweepConfig, _validate, load_json_config, rho_k_search
from app.experiments import sweep as run_sweep
from app.middleware.exit_codes import exit_codes


@click.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Sweep config JSON (template + grid).")
@click.option("--out", type=click.Path(file_okay=False), default=None)
@click.option("--workers", type=click.IntRange(min=1), default=None)
@click.option("--rho-k", "rho_k", type=click.IntRange(min=2), default=None,
              help="Random-family search for the largest rho with this many members.")
@click.option("--dim", type=click.IntRange(min=2), default=3, show_default=True)
@click.option("--families", type=click.IntRange(min=1), default=20, show_default=True)
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True)
@exit_codes
def sweep(config_path, out, workers, rho_k, dim, families, seed):
    """Aggregate per-cell scalars into sweep.json; exit 1 if a cell produced no output."""
    if rho_k is not None:
        summary = rho_k_search(rho_k, dim, families, seed, out or "rho_k_search", workers)
        logger.info(f"✅ max rho = {summary['max_rho']}")
        return
    if config_path is None:
        raise ConfigError("give --config or --rho-k")
    data = load_json_config(config_path)
    if out is not None:
        data["out"] = out
    if workers is not None:
        data["workers"] = workers
    result = run_sweep(_validate(SweepConfig, data))
    if not result.complete:
        logger.error("❌ some sweep cells produced no output")
        raise click.exceptions.Exit(1)
    logger.info(f"✅ {len(result.cells)} cells")
