"""
Exit-status middleware for the projlab commands
"""
from functools import wraps

import click
from loguru import logger

from app.errors import CertificationFailed, ConfigError, ProjLabError

EXIT_CERTIFICATION_FAILED = 1
EXIT_BAD_INPUT = 2


def exit_codes(f):
    """
    Decorator mapping laboratory errors to process exit statuses
    """
    @wraps(f)
    def decorated(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except ConfigError as e:
            logger.error(f"❌ invalid configuration: {e}")
            raise click.exceptions.Exit(EXIT_BAD_INPUT)
        except CertificationFailed as e:
            logger.error(f"❌ certification failed: {', '.join(e.failed)}")
            raise click.exceptions.Exit(EXIT_CERTIFICATION_FAILED)
        except ProjLabError as e:
            logger.error(f"❌ {type(e).__name__}: {e}")
            raise click.exceptions.Exit(EXIT_BAD_INPUT)

    return decorated
