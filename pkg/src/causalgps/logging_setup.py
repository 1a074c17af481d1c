from __future__ import annotations

import logging
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Literal

from .errors import ConfigError, IoError

TRACE = 5
logging.addLevelName(TRACE, "TRACE")

LogLevel = Literal["TRACE", "DEBUG", "INFO"]
ROOT_LOGGER = "causalgps"
_LEVELS: dict[str, int] = {"TRACE": TRACE, "DEBUG": logging.DEBUG, "INFO": logging.INFO}


@dataclass(frozen=True)
class LogConfig:
    level: LogLevel = "INFO"
    file_path: str | None = None

    def __post_init__(self) -> None:
        level = str(self.level).upper()
        if level not in _LEVELS:
            raise ConfigError(f"log level must be one of {sorted(_LEVELS)}, got {self.level!r}")
        object.__setattr__(self, "level", level)


class UtcIsoFormatter(logging.Formatter):
    """``<ISO-8601 UTC timestamp> <LEVEL> <message>``."""

    def __init__(self) -> None:
        super().__init__("%(asctime)s %(levelname)s %(message)s")

    def formatTime(self, record: logging.LogRecord, datefmt: str | None = None) -> str:  # noqa: N802
        ts = datetime.fromtimestamp(record.created, tz=timezone.utc)
        return ts.isoformat(timespec="milliseconds").replace("+00:00", "Z")


def configure_logging(cfg: LogConfig) -> logging.Logger:
    """Install stderr (and optional file) handlers on the package logger.

    Handlers installed by an earlier call are replaced, so repeated CLI invocations in
    one process do not duplicate output.
    """
    logger = logging.getLogger(ROOT_LOGGER)
    for handler in list(logger.handlers):
        if getattr(handler, "_causalgps", False):
            logger.removeHandler(handler)
            handler.close()

    handlers: list[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if cfg.file_path:
        try:
            Path(cfg.file_path).parent.mkdir(parents=True, exist_ok=True)
            handlers.append(logging.FileHandler(cfg.file_path, encoding="utf-8"))
        except OSError as e:
            raise IoError(f"cannot open log file {cfg.file_path}: {e}") from e

    formatter = UtcIsoFormatter()
    for handler in handlers:
        handler.setFormatter(formatter)
        handler._causalgps = True  # type: ignore[attr-defined]
        logger.addHandler(handler)
    logger.setLevel(_LEVELS[cfg.level])
    return logger


def trace(logger: logging.Logger, msg: str, *args: object) -> None:
    if logger.isEnabledFor(TRACE):
        logger.log(TRACE, msg, *args)
