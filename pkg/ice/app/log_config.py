"""
Logging setup shared by the CLI and the worker pool
"""

import logging
import sys

from pythonjsonlogger import jsonlogger

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def configure_logging(level: str = "INFO", json_output: bool = False) -> logging.Logger:
    """
    Route the root logger to stderr

    Result files and the verification report go to stdout or disk, so log
    records never interleave with them.

    Args:
        level: Log level name
        json_output: Emit one JSON object per record instead of plain text

    Returns:
        The configured root logger
    """
    handler = logging.StreamHandler(sys.stderr)
    if json_output:
        handler.setFormatter(jsonlogger.JsonFormatter(LOG_FORMAT))
    else:
        handler.setFormatter(logging.Formatter(LOG_FORMAT))

    root = logging.getLogger()
    for existing in list(root.handlers):
        root.removeHandler(existing)
    root.addHandler(handler)
    root.setLevel(getattr(logging, level.upper(), logging.INFO))
    return root
