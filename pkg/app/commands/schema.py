"""
schema: write the JSON schemas of the experiment and sweep configs
"""
from pathlib import Path

import click
from loguru import logger

from app.artifacts import write_json
from app.experiments import schemas
from app.middleware.exit_codes import exit_codes


@click.command()
@click.option("--out", type=click.Path(file_okay=False), default="docs", show_default=True)
@exit_codes
def schema(out):
    """Write experiment.schema.json and sweep.schema.json."""
    for name, body in schemas().items():
        path = write_json(Path(out) / f"{name}.schema.json", body)
        logger.info(f"📊 {path}")
