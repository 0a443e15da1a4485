"""Logging setup shared by the library, the services and the CLI.

Every module calls ``get_logger(__name__)``. Loggers write to the console and
to a daily-rotating ``steinforge.log`` under ``settings.LOG_DIR``; while an
experiment runs, ``run_log`` additionally mirrors all records into the run
directory so each run keeps its own log next to its trace.
"""
import logging
from contextlib import contextmanager
from logging.handlers import TimedRotatingFileHandler
from pathlib import Path
from typing import Iterator, Optional

from config import settings

LOG_FORMAT = "%(asctime)s [%(name)s] %(levelname)s: %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"
RUN_LOG_NAME = "run.log"


def _formatter() -> logging.Formatter:
    return logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT)


def setup_logger(name: str, level: Optional[int] = None) -> logging.Logger:
    """Attach console and rotating-file handlers to ``name`` once.

    Args:
        name: Logger name (typically module name)
        level: Logging level (default ``settings.log_level``)
    """
    logger = logging.getLogger(name)
    if logger.handlers:
        return logger

    logger.setLevel(settings.log_level if level is None else level)

    log_dir = Path(settings.LOG_DIR)
    log_dir.mkdir(parents=True, exist_ok=True)

    formatter = _formatter()
    file_handler = TimedRotatingFileHandler(
        log_dir / "steinforge.log", when="midnight", backupCount=7, encoding="utf-8"
    )
    file_handler.setFormatter(formatter)
    logger.addHandler(file_handler)

    console_handler = logging.StreamHandler()
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)
    return logger


def get_logger(name: str) -> logging.Logger:
    return setup_logger(name)


@contextmanager
def run_log(run_dir: Path, level: Optional[int] = None) -> Iterator[Path]:
    """Copy every propagated record into ``run_dir/run.log`` until exit."""
    path = Path(run_dir) / RUN_LOG_NAME
    handler = logging.FileHandler(path, mode="w", encoding="utf-8")
    handler.setFormatter(_formatter())
    handler.setLevel(settings.log_level if level is None else level)
    root = logging.getLogger()
    root.addHandler(handler)
    try:
        yield path
    finally:
        root.removeHandler(handler)
        handler.close()
