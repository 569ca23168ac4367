from __future__ import annotations

import datetime
import json
import logging
import os
import threading
import uuid
from typing import Any, Dict, Optional

import numpy as np

logger = logging.getLogger(__name__)

__all__ = ("RunLogger", "get_current_ts", "to_jsonable")


def get_current_ts() -> str:
    return datetime.datetime.now(datetime.timezone.utc).strftime("%Y-%m-%d %H:%M:%S.%f")


def to_jsonable(obj: Any) -> Any:
    if isinstance(obj, (str, bool, int)) or obj is None:
        return obj
    if isinstance(obj, float):
        return obj if np.isfinite(obj) else str(obj)
    if isinstance(obj, np.generic):
        return to_jsonable(obj.item())
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()] if obj.size <= 64 else f"<array shape={obj.shape}>"
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if hasattr(obj, "model_dump"):
        return to_jsonable(obj.model_dump())
    return str(obj)


class RunLogger:
    """
    Append-only JSON-lines log of a pipeline run.

    Every record carries the session id, a UTC timestamp and the emitting thread, so
    concurrent stages of one study can be told apart afterwards.
    """

    def __init__(self, config: Optional[Dict[str, Any]] = None):
        self.config = config or {}
        self.session_id = str(uuid.uuid4())

        self.log_dir = self.config.get("log_dir") or os.path.join(os.getcwd(), "reiterhom_logs")
        os.makedirs(self.log_dir, exist_ok=True)
        self.log_file = os.path.join(self.log_dir, self.config.get("filename", "runtime.log"))

        self.logger = logging.getLogger(f"{__name__}.{self.session_id}")
        self.logger.setLevel(logging.INFO)
        self.logger.propagate = False
        self._handler: Optional[logging.Handler] = None
        try:
            self._handler = logging.FileHandler(self.log_file)
            self.logger.addHandler(self._handler)
        except OSError as e:
            logger.error(f"[runlog] Failed to create logging file: {e}")

    def start(self) -> str:
        """Start the logger and return the session_id."""
        self.log_event("session", {"status": "started"})
        return self.session_id

    def log_event(self, event: str, payload: Optional[Dict[str, Any]] = None) -> None:
        try:
            record = {
                "session_id": self.session_id,
                "event": event,
                "timestamp": get_current_ts(),
                "thread_id": threading.get_ident(),
                "payload": to_jsonable(payload or {}),
            }
            self.logger.info(json.dumps(record))
        except (TypeError, ValueError) as e:
            logger.error(f"[runlog] Failed to log event {event}: {e}")

    def log_stage(self, stage: str, status: str, **payload: Any) -> None:
        self.log_event("stage", {"stage": stage, "status": status, **payload})

    def stop(self) -> None:
        self.log_event("session", {"status": "stopped"})
        if self._handler is not None:
            self.logger.removeHandler(self._handler)
            self._handler.close()
            self._handler = None
