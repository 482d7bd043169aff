"""Append-only experiment log of scalar results."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

from .status import GlobalStatus


@dataclass(frozen=True)
class RecordEntry:
    key: str
    value: float
    snapshot: dict
    wall_time: float
    anomaly: bool


class LogicalClock:
    """Deterministic stand-in for wall time: counts ticks."""

    def __init__(self):
        self.ticks = 0

    def __call__(self) -> float:
        t = float(self.ticks)
        self.ticks += 1
        return t


class WallClock:
    """Seconds since construction."""

    def __init__(self):
        self._t0 = time.perf_counter()

    def __call__(self) -> float:
        return time.perf_counter() - self._t0


class Recorder:
    def __init__(self, clock=None):
        self.clock = clock or WallClock()
        self._entries: list[RecordEntry] = []
        self._declared: dict[str, None] = {}

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def entries(self) -> tuple:
        return tuple(self._entries)

    def append(self, key: str, value: float, status: GlobalStatus) -> RecordEntry:
        """Record ``value`` under ``key``; non-finite values become anomaly entries."""
        value = float(value)
        entry = RecordEntry(key, value, status.snapshot(), self.clock(), not math.isfinite(value))
        self._entries.append(entry)
        return entry

    def declare(self, *keys: str) -> None:
        """Make keys known before their first entry (exported as empty series)."""
        for k in keys:
            self._declared.setdefault(k, None)

    def keys(self) -> list:
        seen = dict(self._declared)
        for e in self._entries:
            seen.setdefault(e.key, None)
        return list(seen)

    def series(self, key: str) -> list:
        return [e for e in self._entries if e.key == key]


def record_append(recorder: Recorder, key: str, value: float, status: GlobalStatus) -> Recorder:
    recorder.append(key, value, status)
    return recorder
