"""Globally shared counters and the schedulers that read them."""

from __future__ import annotations

import math
from dataclasses import dataclass

from ..errors import ConfigError, ContractError

BUILTIN_COUNTERS = (
    "total_real_samples",
    "total_sim_samples",
    "total_train_steps",
    "total_test_episodes",
    "cycle_index",
)


class GlobalStatus:
    """Monotone counters plus freely settable custom keys.

    Counters only accept non-negative increments. Custom keys must be
    registered before use; reading an unknown key raises.
    """

    def __init__(self):
        self._counters = dict.fromkeys(BUILTIN_COUNTERS, 0)
        self._custom: dict[str, float] = {}

    def register(self, key: str, value: float = 0.0) -> None:
        if key in self._counters:
            raise ContractError(f"{key!r} is a built-in counter")
        self._custom[key] = value

    def update(self, key: str, delta: float | None = None, *, value: float | None = None) -> None:
        if key in self._counters:
            if delta is None or delta < 0:
                raise ContractError(f"counter {key!r} only accepts non-negative increments")
            self._counters[key] += delta
        elif key in self._custom:
            if value is None:
                value = self._custom[key] + (delta or 0)
            self._custom[key] = value
        else:
            raise ConfigError(f"status key {key!r} is not registered", key)

    def get(self, key: str):
        if key in self._counters:
            return self._counters[key]
        if key in self._custom:
            return self._custom[key]
        raise ConfigError(f"status key {key!r} is not registered", key)

    __getitem__ = get

    def __contains__(self, key) -> bool:
        return key in self._counters or key in self._custom

    def snapshot(self) -> dict:
        """Copy of the built-in counters."""
        return dict(self._counters)


def status_update(status: GlobalStatus, key: str, delta=None, value=None) -> GlobalStatus:
    status.update(key, delta, value=value)
    return status


def status_get(status: GlobalStatus, key: str):
    return status.get(key)


@dataclass(frozen=True)
class LinearDecay:
    init: float
    final: float
    span: float
    over: str = "total_real_samples"

    def __post_init__(self):
        if self.span <= 0:
            raise ContractError("LinearDecay span must be positive")

    def value(self, status: GlobalStatus) -> float:
        t = status.get(self.over)
        return self.init + (self.final - self.init) * min(t / self.span, 1.0)


@dataclass(frozen=True)
class ExponentialDecay:
    init: float
    rate: float
    over: str = "total_real_samples"

    def value(self, status: GlobalStatus) -> float:
        return self.init * self.rate ** status.get(self.over)


@dataclass(frozen=True)
class PiecewiseConstant:
    """``values[i]`` holds while ``i`` breakpoints are <= t; needs one more value than breakpoints."""

    breakpoints: tuple
    values: tuple
    over: str = "total_real_samples"

    def __post_init__(self):
        if len(self.values) != len(self.breakpoints) + 1:
            raise ContractError("PiecewiseConstant needs len(values) == len(breakpoints) + 1")
        if any(b > a for a, b in zip(self.breakpoints[1:], self.breakpoints)):
            raise ContractError("PiecewiseConstant breakpoints must be ascending")

    def value(self, status: GlobalStatus) -> float:
        t = status.get(self.over)
        i = sum(1 for b in self.breakpoints if b <= t)
        return self.values[i]


Scheduler = LinearDecay | ExponentialDecay | PiecewiseConstant


def schedule_value(scheduler, status: GlobalStatus) -> float:
    return scheduler.value(status)


def resolve(source, status: GlobalStatus) -> float:
    """A constant passes through; anything with ``value(status)`` is evaluated."""
    if hasattr(source, "value"):
        v = source.value(status)
    else:
        v = source
    v = float(v)
    if math.isnan(v):
        raise ContractError("scheduled value is NaN")
    return v
