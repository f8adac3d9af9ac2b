"""
Logging for active-torus.

All package loggers hang below ``active_torus``. Run events (start, stop, abort,
violation) travel as ``extra={"data": {...}}`` so the JSON format keeps them as
fields instead of flattening them into the message.
"""

import json
import logging
import logging.handlers
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional

ROOT_LOGGER_NAME = "active_torus"

TEXT_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOG_FILE_BYTES = 10 * 1024 * 1024
LOG_FILE_BACKUPS = 5


class JsonFormatter(logging.Formatter):
    """One JSON object per line."""

    def format(self, record: logging.LogRecord) -> str:
        entry: Dict[str, Any] = {
            "timestamp": datetime.fromtimestamp(record.created, tz=timezone.utc).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
            "source": f"{record.module}.{record.funcName}:{record.lineno}",
        }
        if record.exc_info and record.exc_info[0] is not None:
            entry["exception"] = {
                "type": record.exc_info[0].__name__,
                "message": str(record.exc_info[1]),
            }
        data = getattr(record, "data", None)
        if isinstance(data, dict):
            entry["data"] = data
        return json.dumps(entry, default=_json_default)


def _json_default(value: Any) -> Any:
    # numpy scalars and paths end up in event payloads
    if hasattr(value, "item"):
        return value.item()
    return str(value)


def setup_logging(
    log_level: str = "INFO",
    log_format: str = "text",
    log_dir: Optional[str] = None,
    app_name: str = "active-torus",
) -> None:
    """
    Configure the ``active_torus`` logger tree.

    Calling it again replaces the handlers installed by the previous call.

    Args:
        log_level: Level name; unknown names fall back to INFO
        log_format: "text" or "json"
        log_dir: Also write ``<app_name>.log`` here, rotated at 10 MB
        app_name: Log file stem
    """
    level = getattr(logging, log_level.upper(), logging.INFO)
    root = logging.getLogger(ROOT_LOGGER_NAME)
    root.setLevel(level)
    root.propagate = False
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()

    formatter: logging.Formatter
    if log_format.lower() == "json":
        formatter = JsonFormatter()
    else:
        formatter = logging.Formatter(TEXT_FORMAT)

    # stdout carries CSV for kernel-table
    handlers: list[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_dir:
        directory = Path(log_dir)
        directory.mkdir(parents=True, exist_ok=True)
        handlers.append(
            logging.handlers.RotatingFileHandler(
                directory / f"{app_name}.log",
                maxBytes=LOG_FILE_BYTES,
                backupCount=LOG_FILE_BACKUPS,
            )
        )
    for handler in handlers:
        handler.setFormatter(formatter)
        root.addHandler(handler)

    root.debug("logging configured: level=%s format=%s", log_level, log_format)


def get_logger(name: str) -> logging.Logger:
    """Return ``active_torus.<name>``; names already in the tree pass through."""
    if name == ROOT_LOGGER_NAME or name.startswith(ROOT_LOGGER_NAME + "."):
        return logging.getLogger(name)
    return logging.getLogger(f"{ROOT_LOGGER_NAME}.{name}")


def log_event(
    logger: logging.Logger,
    kind: str,
    message: str,
    level: int = logging.INFO,
    **data: Any,
) -> None:
    """
    Log a structured run event.

    Args:
        logger: Logger to emit on
        kind: Event kind, stored under ``data["kind"]``
        message: Human-readable message
        level: Logging level
        **data: Additional structured fields
    """
    logger.log(level, message, extra={"data": {"kind": kind, **data}})
