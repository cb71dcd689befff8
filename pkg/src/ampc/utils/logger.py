"""
Package logger. Every module logs through the single "ampc" logger; console
output goes through `tqdm.write` so messages do not tear the progress bars of
the sampler and the certifier. Pipeline runs attach a file handler whose
records carry the run id.
"""

import logging
import sys
from pathlib import Path
from typing import Optional, Union

from tqdm import tqdm

BASE_NAME = "ampc"
NO_RUN = "-"

CONSOLE_FORMAT = "%(asctime)s [%(levelname)s] %(message)s"
FILE_FORMAT = "%(asctime)s [%(levelname)s] %(run_id)s %(name)s: %(message)s"

_LEVELS = {
    "CRITICAL": logging.CRITICAL,
    "ERROR": logging.ERROR,
    "WARNING": logging.WARNING,
    "INFO": logging.INFO,
    "DEBUG": logging.DEBUG,
}

_LOGGER: Optional[logging.Logger] = None


class TqdmHandler(logging.StreamHandler):  # type: ignore[type-arg]
    """Console handler that prints above any active tqdm bar."""

    def emit(self, record: logging.LogRecord) -> None:
        try:
            tqdm.write(self.format(record), file=self.stream)
            self.flush()
        except Exception:
            self.handleError(record)


class RunIdFilter(logging.Filter):
    """Stamps records with the id of the pipeline run being logged."""

    def __init__(self, run_id: str = NO_RUN) -> None:
        super().__init__()
        self.run_id = run_id

    def filter(self, record: logging.LogRecord) -> bool:
        record.run_id = self.run_id
        return True


def get_logger(
    name: str = BASE_NAME,
    log_file: Optional[Path] = None,
    level: Union[str, int, None] = None,
) -> logging.Logger:
    """
    Returns the package logger, creating it on first use. `name` is accepted
    so modules can call `get_logger(__name__)`; all of them share one logger.
    `log_file` is only honoured on creation, later files go through
    `add_file_handler`.
    """
    global _LOGGER

    if _LOGGER is None:
        base = logging.getLogger(BASE_NAME)
        base.setLevel(_resolve_level(level) if level is not None else logging.INFO)
        base.propagate = True
        if not base.handlers:
            console = TqdmHandler(sys.stdout)
            console.setFormatter(logging.Formatter(CONSOLE_FORMAT, "%H:%M:%S"))
            base.addHandler(console)
            if log_file:
                add_file_handler(log_file, logger=base)
        _LOGGER = base
    elif level is not None:
        _LOGGER.setLevel(_resolve_level(level))
    return _LOGGER


def add_file_handler(
    log_file: Path,
    run_id: str = NO_RUN,
    logger: Optional[logging.Logger] = None,
) -> logging.FileHandler:
    """Attach a run log file; the handler is returned so it can be detached."""
    base = logger if logger is not None else get_logger()
    log_file.parent.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(log_file, encoding="utf-8")
    handler.setFormatter(logging.Formatter(FILE_FORMAT, "%Y-%m-%d %H:%M:%S"))
    handler.addFilter(RunIdFilter(run_id))
    base.addHandler(handler)
    return handler


def bind_run_id(handler: logging.Handler, run_id: str) -> None:
    """Tag the following records of a file handler with `run_id`."""
    for f in handler.filters:
        if isinstance(f, RunIdFilter):
            f.run_id = run_id
            return
    handler.addFilter(RunIdFilter(run_id))


def remove_handler(handler: logging.Handler) -> None:
    handler.flush()
    handler.close()
    get_logger().removeHandler(handler)


def _resolve_level(level: Union[str, int]) -> int:
    if isinstance(level, int):
        return level
    return _LEVELS.get(str(level).upper(), logging.INFO)


def set_global_log_level(level: Union[str, int]) -> None:
    """Set the level of the package logger and of any `ampc.*` child logger."""
    resolved = _resolve_level(level)
    get_logger(level=resolved)
    for name, obj in logging.Logger.manager.loggerDict.items():
        if isinstance(obj, logging.Logger) and name.startswith(BASE_NAME + "."):
            obj.setLevel(resolved)
