"""
certify: full experiment; exit status 1 when a requested check fails
"""
import click

from app.commands.common import experiment_options, load_experiment
from app.experiments import run_experiment
from app.middleware.exit_codes import exit_codes


@click.command()
@experiment_options
@exit_codes
def certify(config_path, seed, out):
    """Write trajectory, quantities and certification reports."""
    run_experiment(load_experiment(config_path, seed, out))
