"""Log setup for the command-line runs.

Records go to stderr (and optionally a file) because stdout carries the JSON summary of each command.
"""

import logging
import sys
from typing import Any, Dict, List

from pythonjsonlogger import jsonlogger

from tubeband.config import settings

TEXT_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
JSON_FORMAT = "%(timestamp)s %(level)s %(name)s %(message)s"


class CustomJsonFormatter(jsonlogger.JsonFormatter):
    """JSON records stamped with the tool name, version and run environment."""

    def add_fields(
        self, log_record: Dict[str, Any], record: logging.LogRecord, message_dict: Dict[str, Any]
    ) -> None:
        super().add_fields(log_record, record, message_dict)
        log_record.update(
            timestamp=self.formatTime(record, self.datefmt),
            level=record.levelname,
            logger=record.name,
            app=settings.app_name,
            version=settings.app_version,
            environment=settings.environment,
        )


def _formatter() -> logging.Formatter:
    if settings.log_format == "json":
        return CustomJsonFormatter(JSON_FORMAT)
    return logging.Formatter(TEXT_FORMAT, datefmt="%Y-%m-%d %H:%M:%S")


def _handlers() -> List[logging.Handler]:
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if settings.log_file_path:
        handlers.append(logging.FileHandler(settings.log_file_path, encoding="utf-8"))
    return handlers


def setup_logging() -> None:
    """Replace the root handlers with stderr and the optional log file."""
    level = getattr(logging, settings.log_level.upper())
    formatter = _formatter()

    root = logging.getLogger()
    root.setLevel(level)
    root.handlers.clear()
    for handler in _handlers():
        handler.setLevel(level)
        handler.setFormatter(formatter)
        root.addHandler(handler)


def get_logger(name: str) -> logging.Logger:
    return logging.getLogger(name)
