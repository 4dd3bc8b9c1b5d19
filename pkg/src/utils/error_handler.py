"""
Error handling decorator for CLI commands.
"""
from functools import wraps

import click

from .exceptions import ArtikinError
from .logger import setup_logger, log_error_with_context


logger = setup_logger(__name__)

EXIT_FAILURE = 1


def exit_on_error(f):
    """
    Decorator turning artikin errors into a logged message and exit status 1.

    Usage errors raised by click itself pass through untouched (exit status 2).
    """
    @wraps(f)
    def decorated_function(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except ArtikinError as e:
            log_error_with_context(logger, e, {'command': f.__name__})
            click.echo(f"Error [{e.error_code}]: {e.message}", err=True)
            raise SystemExit(EXIT_FAILURE) from e

    return decorated_function
