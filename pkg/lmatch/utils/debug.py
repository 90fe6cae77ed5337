"""
Verbose numerical tracing, switched on by LMATCH_DEBUG_MODE or --debug.

Messages go to the `lmatch.debug` logger so they interleave with ordinary
log records; formatting work is skipped entirely while tracing is off.
"""

import logging
from typing import Any

import numpy as np

from config.settings import DEBUG_MODE

_debug_logger = logging.getLogger("lmatch.debug")


class DebugManager:
    """Process-wide switch for numerical traces."""

    def __init__(self, enabled: bool = DEBUG_MODE):
        self._enabled = enabled

    def is_enabled(self) -> bool:
        return self._enabled

    def enable(self):
        self._enabled = True

    def print(self, message: str, prefix: str = "DEBUG"):
        if self._enabled:
            _debug_logger.debug(f"{prefix}: {message}")

    def call(self, function_name: str, *args: Any, **kwargs: Any):
        """Trace a call with its arguments."""
        if self._enabled:
            parts = [repr(a) for a in args] + [f"{k}={v!r}" for k, v in kwargs.items()]
            self.print(f"{function_name}({', '.join(parts)})", prefix="CALL")

    def metrics(self, label: str, **values: float):
        """Trace named scalars, e.g. per-step loss and gradient norm."""
        if self._enabled:
            body = " ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in values.items())
            self.print(f"{label}: {body}", prefix="STEP")

    def array(self, name: str, values: np.ndarray):
        """Trace shape, range and non-finite count of an array."""
        if not self._enabled:
            return
        values = np.asarray(values)
        finite = values[np.isfinite(values)]
        bad = values.size - finite.size
        if finite.size:
            summary = f"min={finite.min():.4g} max={finite.max():.4g} mean={finite.mean():.4g}"
        else:
            summary = "no finite entries"
        self.print(f"{name} shape={values.shape} {summary} nonfinite={bad}", prefix="ARRAY")


debug = DebugManager()
