import click
from loguru import logger

from app.commands.certify import certify
from app.commands.construct import construct
from app.commands.measure import measure
from app.commands.schema import schema
from app.commands.simulate import simulate
from app.commands.sweep import sweep
from app.config import settings


def configure_logging(level: str) -> None:
    logger.remove()
    logger.add(lambda message: click.echo(message, err=True, nl=False), level=level.upper(),
               format="{time:HH:mm:ss} | {level: <8} | {message}", colorize=False)


def create_cli():
    @click.group()
    @click.option("--log-level", default=settings.LOG_LEVEL, show_default=True,
                  type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False))
    def cli(log_level):
        """projlab: projection algorithms on families of subspaces."""
        configure_logging(log_level)

    # Register commands
    cli.add_command(construct)
    cli.add_command(simulate)
    cli.add_command(measure)
    cli.add_command(certify)
    cli.add_command(sweep)
    cli.add_command(schema)

    return cli


cli = create_cli()


if __name__ == "__main__":
    cli()
