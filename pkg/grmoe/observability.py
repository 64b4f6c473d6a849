"""
Structured logging helpers.

Every event is a single JSON object:
- event name
- run context (run_id, subcommand, seed) when set
- caller-supplied fields (numbers, short strings)
"""

from __future__ import annotations

import json
import logging
import sys
from typing import Any, Optional

import numpy as np

from .config import Settings, settings
from .context.run_context import get_run_context

_HANDLER_NAME = "grmoe-stream"


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return value


def log_event(
    logger: logging.Logger, event: str, level: int = logging.INFO, **fields: Any
) -> None:
    if not logger.isEnabledFor(level):
        return
    ctx = {k: v for k, v in get_run_context().items() if v is not None}
    payload = {"event": event, **ctx, **{k: _jsonable(v) for k, v in fields.items()}}
    try:
        logger.log(level, json.dumps(payload, ensure_ascii=False))
    except (TypeError, ValueError):  # pragma: no cover
        logger.log(level, "%s %s", event, payload)


def configure_logging(cfg: Optional[Settings] = None) -> logging.Logger:
    """Install one stream handler on the `grmoe` logger (idempotent)."""
    cfg = cfg or settings
    root = logging.getLogger("grmoe")
    root.setLevel(cfg.log_level)
    if not any(h.get_name() == _HANDLER_NAME for h in root.handlers):
        handler = logging.StreamHandler(sys.stderr)
        handler.set_name(_HANDLER_NAME)
        fmt = "%(asctime)s %(name)s %(levelname)s %(message)s"
        if cfg.log_json:
            fmt = "%(message)s"
        handler.setFormatter(logging.Formatter(fmt))
        root.addHandler(handler)
    return root
