import logging
import os
import sys
from typing import Optional

from pythonjsonlogger import jsonlogger

LOG_LEVEL_ENV_VAR = "SHELFALIGN_LOG_LEVEL"
_FORMAT = "%(asctime)s %(name)s %(levelname)s %(message)s"


def configure_logging(level: Optional[str] = None, json_output: bool = True) -> None:
    """Install a single stderr handler on the root logger."""
    level_name = (level or os.getenv(LOG_LEVEL_ENV_VAR) or "INFO").upper()

    handler = logging.StreamHandler(sys.stderr)
    if json_output:
        handler.setFormatter(jsonlogger.JsonFormatter(_FORMAT))
    else:
        handler.setFormatter(logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s"))

    root = logging.getLogger()
    for existing in list(root.handlers):
        root.removeHandler(existing)
    root.addHandler(handler)
    root.setLevel(getattr(logging, level_name, logging.INFO))
