"""
construct: build a family and write it as JSON
"""
import json
from pathlib import Path

import click
from loguru import logger

from app.commands.common import load_experiment
from app.errors import ConfigError
from app.experiments import parse_config, write_family
from app.lab.constructions import PRESET_ALIASES, PRESETS
from app.middleware.exit_codes import exit_codes


def _parse_params(pairs: tuple[str, ...]) -> dict:
    params = {}
    for pair in pairs:
        key, sep, raw = pair.partition("=")
        if not sep or not key:
            raise ConfigError(f"--param expects key=value, got {pair!r}")
        try:
            params[key] = json.loads(raw)
        except json.JSONDecodeError:
            params[key] = raw
    return params


@click.command()
@click.option("--preset", type=click.Choice(sorted({*PRESETS, *PRESET_ALIASES})), default=None,
              help="Named construction.")
@click.option("--param", "params", multiple=True, help="Preset parameter as key=value (repeatable).")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Take the construction from an experiment config instead.")
@click.option("--seed", type=click.IntRange(min=0), default=None)
@click.option("--out", type=click.Path(file_okay=False), default="out", show_default=True)
@exit_codes
def construct(preset, params, config_path, seed, out):
    """Build a construction and write family.json (orthonormal bases, x0, provenance)."""
    if (preset is None) == (config_path is None):
        raise ConfigError("give exactly one of --preset and --config")
    if config_path is not None:
        config = load_experiment(config_path, seed, out)
    else:
        config = parse_config({"construction": preset, "params": _parse_params(params),
                               "seed": seed if seed is not None else 0, "out": out})
    path = write_family(config, Path(out) / "family.json")
    logger.info(f"📊 family written to {path}")
