"""
Options shared by the experiment commands
"""
import click

from app.experiments import ExperimentConfig, load_json_config, parse_config


def experiment_options(f):
    f = click.option("--out", type=click.Path(file_okay=False), default=None,
                     help="Output directory (overrides the config).")(f)
    f = click.option("--seed", type=click.IntRange(min=0), default=None,
                     help="Seed for randomized estimators (overrides the config).")(f)
    f = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                     required=True, help="Experiment config JSON.")(f)
    return f


def load_experiment(config_path: str, seed: int | None, out: str | None) -> ExperimentConfig:
    data = load_json_config(config_path)
    if seed is not None:
        data["seed"] = seed
    if out is not None:
        data["out"] = out
    return parse_config(data)
