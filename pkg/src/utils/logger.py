"""
Centralized logging configuration for artikin.
Console output goes through tqdm so progress bars stay intact; production
runs add a rotating file and training runs get a log inside their run directory.
"""
import logging
import logging.handlers
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, Iterator, Optional, Union

from tqdm import tqdm

from config import config


LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
FILE_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s'

# every logger handed out by setup_logger, by name
_LOGGERS: Dict[str, logging.Logger] = {}


class CustomFormatter(logging.Formatter):
    """Formatter with colored level names and an optional [Run:<id>] prefix."""

    COLORS = {
        'DEBUG': '\033[36m',    # Cyan
        'INFO': '\033[32m',     # Green
        'WARNING': '\033[33m',  # Yellow
        'ERROR': '\033[31m',    # Red
        'CRITICAL': '\033[35m', # Magenta
        'RESET': '\033[0m'      # Reset
    }

    def __init__(self, fmt: str = LOG_FORMAT, color: bool = True):
        super().__init__(fmt)
        self.color = color

    def format(self, record):
        record = logging.makeLogRecord(record.__dict__)
        if getattr(record, 'run_id', None):
            record.msg = f"[Run:{record.run_id}] {record.msg}"

        if self.color:
            log_color = self.COLORS.get(record.levelname, self.COLORS['RESET'])
            record.levelname = f"{log_color}{record.levelname}{self.COLORS['RESET']}"

        return super().format(record)


class TqdmHandler(logging.StreamHandler):
    """Stream handler that writes through tqdm.write so active bars are redrawn below the line."""

    def emit(self, record):
        try:
            tqdm.write(self.format(record), file=self.stream)
            self.flush()
        except Exception:
            self.handleError(record)


def setup_logger(name: str, level: Optional[str] = None) -> logging.Logger:
    """
    Set up a logger with a console handler and, in production, a rotating file.

    Args:
        name: Logger name (usually __name__)
        level: Log level override

    Returns:
        Configured logger instance
    """
    logger = logging.getLogger(name)

    if logger.handlers:
        return logger

    log_level = getattr(logging, (level or config.log_level).upper())
    logger.setLevel(log_level)
    logger.propagate = False

    console_handler = TqdmHandler(sys.stderr)
    console_handler.setLevel(log_level)
    console_handler.setFormatter(CustomFormatter(color=config.environment == 'development'))
    logger.addHandler(console_handler)

    if config.environment == 'production':
        log_dir = Path('logs')
        log_dir.mkdir(exist_ok=True)

        file_handler = logging.handlers.RotatingFileHandler(
            log_dir / 'artikin.log',
            maxBytes=10 * 1024 * 1024,  # 10MB
            backupCount=5
        )
        file_handler.setLevel(logging.INFO)
        file_handler.setFormatter(CustomFormatter(FILE_FORMAT, color=False))
        logger.addHandler(file_handler)

    _LOGGERS[name] = logger
    return logger


@contextmanager
def run_log(path: Union[str, Path]) -> Iterator[Path]:
    """
    Mirror every artikin logger into a plain-text file while the block runs.

    Args:
        path: Log file, created together with its parent directory

    Yields:
        The log file path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(path, encoding='utf-8')
    handler.setLevel(logging.INFO)
    handler.setFormatter(CustomFormatter(FILE_FORMAT, color=False))
    attached = list(_LOGGERS.values())
    for logger in attached:
        logger.addHandler(handler)
    try:
        yield path
    finally:
        for logger in attached:
            logger.removeHandler(handler)
        handler.close()


def log_training_step(logger: logging.Logger, step: int, stage: int, run_id: str = None, **components):
    """Log one optimizer step with its component losses."""
    extra_data = {'step': step, 'stage': stage}
    if run_id:
        extra_data['run_id'] = run_id
    parts = ", ".join(f"{name}={value:.5g}" for name, value in components.items())
    logger.info(f"stage {stage} step {step}: {parts}", extra=extra_data)


def log_error_with_context(logger: logging.Logger, error: Exception, context: dict = None):
    """Log errors with additional context."""
    context = context or {}
    details = getattr(error, 'details', None)
    suffix = f" | details={details}" if details else ""
    logger.error(
        f"Error occurred: {type(error).__name__}: {error}{suffix}",
        extra={f"ctx_{k}": v for k, v in context.items()},
        exc_info=logger.isEnabledFor(logging.DEBUG)
    )
