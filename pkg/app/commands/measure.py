"""
measure: trajectory plus the requested quantities
"""
import click

from app.commands.common import experiment_options, load_experiment
from app.experiments import run_experiment
from app.middleware.exit_codes import exit_codes


@click.command()
@experiment_options
@exit_codes
def measure(config_path, seed, out):
    """Write the trajectory CSV and the quantities JSON."""
    run_experiment(load_experiment(config_path, seed, out), stages=("simulate", "measure"))
