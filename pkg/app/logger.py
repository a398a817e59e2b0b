"""
Logging configuration for the HEI toolkit.
Structured logging with console + optional file output, and the per-epoch JSON-lines writer.
"""
import json
import logging
import os
import sys
from typing import Any, Dict, Optional
from app.config import Config

# Fix Unicode issues on Windows
if sys.platform == "win32":
    import io
    sys.stderr = io.TextIOWrapper(sys.stderr.buffer, encoding='utf-8', errors='replace')


def get_logger(name: str) -> logging.Logger:
    """Get a configured logger instance."""
    logger = logging.getLogger(name)
    logger.setLevel(getattr(logging, Config.LOG_LEVEL.upper(), logging.INFO))

    # Avoid duplicate handlers
    if logger.handlers:
        return logger

    # Console handler on stderr; stdout stays free for command output
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(getattr(logging, Config.LOG_LEVEL.upper(), logging.INFO))
    console_handler.setFormatter(logging.Formatter(Config.LOG_FORMAT))
    logger.addHandler(console_handler)

    if Config.LOG_FILE:
        log_dir = os.path.dirname(Config.LOG_FILE)
        if log_dir:
            os.makedirs(log_dir, exist_ok=True)
        file_handler = logging.FileHandler(Config.LOG_FILE, encoding='utf-8')
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(logging.Formatter(Config.LOG_FORMAT))
        logger.addHandler(file_handler)

    logger.propagate = False
    return logger


class EpochLogWriter:
    """
    JSON-lines training log: one record per epoch.

    Records are kept in memory as well so the harness can embed them in the
    result file. Writing to disk is optional (path=None keeps memory only).
    A meta mapping is written first as {"meta": ...} and is not a record.
    """

    FIELDS = ("epoch", "phase", "train_loss", "val_acc", "penalty", "env_sizes", "risks")

    def __init__(self, path: Optional[str] = None, meta: Optional[Dict[str, Any]] = None):
        self.path = path
        self.records: list = []
        self._fh = None
        if path:
            parent = os.path.dirname(path)
            if parent:
                os.makedirs(parent, exist_ok=True)
            self._fh = open(path, "w", encoding="utf-8")
            if meta is not None:
                self._fh.write(json.dumps({"meta": meta}, sort_keys=True) + "\n")

    def write(self, record: Dict[str, Any]):
        row = {key: record.get(key) for key in self.FIELDS}
        self.records.append(row)
        if self._fh is not None:
            self._fh.write(json.dumps(row, sort_keys=True) + "\n")

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
