"""Timestamp sources.

Persisted records carry timestamps from an injectable clock so that demo runs
can be byte-reproducible: a LogicalClock ticks one second per reading from a
fixed epoch instead of consulting the wall. I/O deadlines always use the real
clock; only recorded timestamps go through this indirection.
"""

from __future__ import annotations

import threading
import time

LOGICAL_EPOCH = 1_700_000_000.0


class LogicalClock:
    def __init__(self, start: float = LOGICAL_EPOCH, step: float = 1.0):
        self._now = start
        self._step = step
        self._lock = threading.Lock()

    def __call__(self) -> float:
        with self._lock:
            value = self._now
            self._now += self._step
            return value


def wall_clock() -> float:
    return time.time()
