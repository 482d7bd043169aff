"""Experiment management: shared status, schedulers, recording, configs and runs."""

from .config import ExperimentConfig, config_dumps, config_load, config_parse, validate
from .recorder import LogicalClock, RecordEntry, Recorder, WallClock, record_append
from .status import (
    BUILTIN_COUNTERS,
    ExponentialDecay,
    GlobalStatus,
    LinearDecay,
    PiecewiseConstant,
    resolve,
    schedule_value,
    status_get,
    status_update,
)

_LAZY = ("Experiment", "RunExistsError", "build", "experiment_run")


def __getattr__(name):
    # experiment pulls in the training engine, which itself imports this package
    if name in _LAZY:
        from . import experiment

        return getattr(experiment, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


__all__ = [
    "ExperimentConfig", "config_dumps", "config_load", "config_parse", "validate",
    "Experiment", "RunExistsError", "build", "experiment_run",
    "LogicalClock", "RecordEntry", "Recorder", "WallClock", "record_append",
    "BUILTIN_COUNTERS", "ExponentialDecay", "GlobalStatus", "LinearDecay", "PiecewiseConstant",
    "resolve", "schedule_value", "status_get", "status_update",
]
