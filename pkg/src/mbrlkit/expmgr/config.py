"""Experiment configuration: TOML text in, validated and fully defaulted config out.

Grammar (TOML subset)::

    [experiment]   name, seed, out_dir
    [env]          kind = "cartpole" | "pendulum" | "lti", then that kind's keys
    [algorithm]    kind = "dqn" | "mpc" | "ilqr", then that kind's keys
    [dynamics]     kind = "none" | "linear" | "mlp", then that kind's keys
    [exploration]  kind = "none" | "epsilon_greedy" | "gaussian", then its keys
    [flow]         kind = "train_test" | "dyna", then that kind's keys
    [schedulers.<name>]  kind = "linear" | "exponential" | "piecewise", then its keys
    [monitor]      log_level, console, x_axis, clock

Keys marked as schedulable (``algorithm.lr``, ``dynamics.lr``,
``exploration.epsilon``, ``exploration.sigma``) take either a number or the
name of a ``[schedulers.<name>]`` table. ``type`` is accepted as an alias of
``kind``. Every key absent from the file takes the default from the tables
below; keys not listed there are rejected.
"""

from __future__ import annotations

import copy
import math
import re
import sys
from dataclasses import dataclass

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

import tomli_w

from ..errors import (
    ConfigSyntaxError,
    ConfigValueError,
    IncompatibleError,
    UnknownKeyError,
    UnresolvedReferenceError,
)
from .status import BUILTIN_COUNTERS


class _Sched(float):
    """Default value for a schedulable key."""


EXPERIMENT = {"name": "experiment", "seed": 0, "out_dir": "runs/experiment"}

ENV = {
    "cartpole": {
        "gravity": 9.8, "masscart": 1.0, "masspole": 0.1, "half_length": 0.5, "force_mag": 10.0,
        "dt": 0.02, "x_threshold": 2.4, "theta_threshold": 12 * math.pi / 180, "max_episode_steps": 200,
        "init_range": 0.05,
    },
    "pendulum": {
        "g": 10.0, "m": 1.0, "l": 1.0, "dt": 0.05, "max_torque": 2.0, "max_speed": 8.0, "obs_mode": "trig",
        "max_episode_steps": 200, "init_theta": math.pi, "init_speed": 1.0,
    },
    "lti": {
        "A": [[1.0, 0.1], [0.0, 1.0]], "B": [[0.005], [0.1]], "Q": [[1.0, 0.0], [0.0, 1.0]], "R": [[0.1]],
        "x0": [1.0, 0.0], "horizon": 50, "action_bound": 1000.0,
    },
}

ALGORITHM = {
    "dqn": {
        "hidden": [64, 64], "activation": "relu", "lr": _Sched(1e-3), "gamma": 0.99, "batch_size": 64,
        "sync_interval": 500, "buffer_capacity": 50000,
    },
    "mpc": {"horizon": 20, "n_candidates": 1000, "model": "true", "buffer_capacity": 50000},
    "ilqr": {
        "horizon": 50, "max_iter": 100, "mu_init": 1e-6, "mu_min": 1e-6, "mu_max": 1e10, "mu_factor": 1.6,
        "tol": 1e-9, "line_search_steps": 11, "init": "lqr", "model": "true", "buffer_capacity": 50000,
    },
}

DYNAMICS = {
    "none": {},
    "linear": {"ridge": 1e-8},
    "mlp": {"hidden": [64, 64], "activation": "tanh", "lr": _Sched(1e-3)},
}

EXPLORATION = {
    "none": {},
    "epsilon_greedy": {"epsilon": _Sched(0.1)},
    "gaussian": {"sigma": _Sched(0.1)},
}

_FLOW_COMMON = {
    "samples_per_cycle": 1, "train_steps_per_cycle": 1, "test_every": 1000, "n_test_episodes": 5,
    "max_real_samples": 10000, "max_cycles": 0,
}
FLOW = {
    "train_test": dict(_FLOW_COMMON),
    "dyna": dict(
        _FLOW_COMMON, model_fit_every=1, k_sim=4, sim_rollout_length=1, sim_capacity=50000, model_epochs=5,
        model_minibatch=64,
    ),
}

SCHEDULER = {
    "linear": {"init": 1.0, "final": 0.0, "span": 1.0, "over": "total_real_samples"},
    "exponential": {"init": 1.0, "rate": 1.0, "over": "total_real_samples"},
    "piecewise": {"breakpoints": [], "values": [0.0], "over": "total_real_samples"},
}

MONITOR = {"log_level": "info", "console": False, "x_axis": "total_real_samples", "clock": "logical"}

KINDED = {"env": ENV, "algorithm": ALGORITHM, "dynamics": DYNAMICS, "exploration": EXPLORATION, "flow": FLOW}
DEFAULT_KIND = {"dynamics": "none", "exploration": "none", "flow": "train_test"}
SECTIONS = ("experiment", "env", "algorithm", "dynamics", "exploration", "flow", "schedulers", "monitor")

ENUMS = {
    "env.obs_mode": ("trig", "raw"),
    "algorithm.activation": ("tanh", "relu"),
    "dynamics.activation": ("tanh", "relu"),
    "algorithm.model": ("true", "learned"),
    "algorithm.init": ("lqr", "zeros"),
    "monitor.log_level": ("info", "warning", "error"),
    "monitor.clock": ("logical", "wall"),
    "monitor.x_axis": BUILTIN_COUNTERS,
}


@dataclass
class ExperimentConfig:
    """Normalised configuration. ``data`` maps section name to a flat dict."""

    data: dict

    def __getitem__(self, section: str) -> dict:
        return self.data[section]

    @property
    def seed(self) -> int:
        return self.data["experiment"]["seed"]

    def key_count(self) -> int:
        n = 0
        for name, sec in self.data.items():
            if name == "schedulers":
                n += sum(len(s) for s in sec.values())
            else:
                n += len(sec)
        return n

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def dumps(self) -> str:
        return config_dumps(self)

    def with_overrides(self, seed: int | None = None, out_dir: str | None = None) -> "ExperimentConfig":
        data = self.to_dict()
        if seed is not None:
            data["experiment"]["seed"] = int(seed)
        if out_dir is not None:
            data["experiment"]["out_dir"] = str(out_dir)
        return ExperimentConfig(data)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_LOC = re.compile(r"\(at line (\d+), column (\d+)\)")


def config_parse(text: str) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        msg = str(exc)
        m = _LOC.search(msg)
        line, col = (int(m.group(1)), int(m.group(2))) if m else (None, None)
        raise ConfigSyntaxError(_LOC.sub("", msg).strip(), line, col) from None
    return validate(raw)


def config_load(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return config_parse(fh.read())


def config_dumps(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(cfg.data)


def _coerce(path: str, value, default):
    """Check ``value`` against the type of ``default``; ints widen to floats."""
    if isinstance(default, _Sched):
        if isinstance(value, str):
            return value
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigValueError(f"expected a number or scheduler name, got {value!r}", path)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigValueError(f"expected true/false, got {value!r}", path)
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigValueError(f"expected an integer, got {value!r}", path)
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigValueError(f"expected a number, got {value!r}", path)
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigValueError(f"expected a string, got {value!r}", path)
        allowed = ENUMS.get(_enum_key(path))
        if allowed and value not in allowed:
            raise ConfigValueError(f"must be one of {', '.join(allowed)}; got {value!r}", path)
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigValueError(f"expected a list, got {value!r}", path)
        return _numeric_list(path, value, as_int=path.endswith(".hidden"))
    raise ConfigValueError(f"unsupported value {value!r}", path)  # pragma: no cover


def _enum_key(path: str) -> str:
    parts = path.split(".")
    return f"{parts[0]}.{parts[-1]}"


def _numeric_list(path, value, as_int=False):
    out = []
    for i, v in enumerate(value):
        if isinstance(v, list):
            out.append(_numeric_list(f"{path}[{i}]", v, as_int))
        elif isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigValueError(f"expected numbers, got {v!r}", f"{path}[{i}]")
        elif as_int:
            if not isinstance(v, int):
                raise ConfigValueError(f"expected an integer, got {v!r}", f"{path}[{i}]")
            out.append(v)
        else:
            out.append(float(v))
    return out


def _fill(section: str, given: dict, schema: dict, prefix: str | None = None) -> dict:
    prefix = prefix or section
    out = {}
    for key, value in given.items():
        if key not in schema:
            raise UnknownKeyError(f"unknown key {key!r}", f"{prefix}.{key}")
        out[key] = _coerce(f"{prefix}.{key}", value, schema[key])
    for key, default in schema.items():
        if key not in out:
            out[key] = float(default) if isinstance(default, _Sched) else copy.deepcopy(default)
    return out


def _kinded(section: str, given: dict, table: dict) -> dict:
    given = dict(given)
    if "type" in given:
        if "kind" in given:
            raise ConfigValueError("give either 'kind' or its alias 'type', not both", f"{section}.type")
        given["kind"] = given.pop("type")
    kind = given.pop("kind", DEFAULT_KIND.get(section))
    if kind is None:
        raise ConfigValueError("missing required key 'kind'", f"{section}.kind")
    if kind not in table:
        raise ConfigValueError(f"unknown kind {kind!r}; expected one of {', '.join(table)}", f"{section}.kind")
    out = {"kind": kind}
    out.update(_fill(section, given, table[kind]))
    return out


def validate(raw: dict) -> ExperimentConfig:
    """Default, type-check and cross-validate a parsed TOML document."""
    for name, value in raw.items():
        if name not in SECTIONS:
            raise UnknownKeyError(f"unknown section {name!r}", name)
        if not isinstance(value, dict):
            raise ConfigValueError("expected a table", name)
    for required in ("env", "algorithm"):
        if required not in raw:
            raise ConfigValueError(f"missing required section [{required}]", required)
    data = {"experiment": _fill("experiment", raw.get("experiment", {}), EXPERIMENT)}
    for section, table in KINDED.items():
        data[section] = _kinded(section, raw.get(section, {}), table)
    scheds = {}
    for name, body in raw.get("schedulers", {}).items():
        if not isinstance(body, dict):
            raise ConfigValueError("expected a table", f"schedulers.{name}")
        scheds[name] = _kinded(f"schedulers.{name}", body, SCHEDULER)
    data["schedulers"] = scheds
    data["monitor"] = _fill("monitor", raw.get("monitor", {}), MONITOR)
    _cross_validate(data)
    return ExperimentConfig(data)


def _cross_validate(data: dict) -> None:
    env, algo, dyn, expl, flow = (data[s] for s in ("env", "algorithm", "dynamics", "exploration", "flow"))

    for name, sch in data["schedulers"].items():
        path = f"schedulers.{name}"
        if sch["over"] not in BUILTIN_COUNTERS:
            raise UnresolvedReferenceError(f"scheduler counter {sch['over']!r} is not a status counter", f"{path}.over")
        if sch["kind"] == "linear" and sch["span"] <= 0:
            raise ConfigValueError("span must be positive", f"{path}.span")
        if sch["kind"] == "piecewise":
            if len(sch["values"]) != len(sch["breakpoints"]) + 1:
                raise ConfigValueError("needs exactly one more value than breakpoints", f"{path}.values")
            if sch["breakpoints"] != sorted(sch["breakpoints"]):
                raise ConfigValueError("breakpoints must be ascending", f"{path}.breakpoints")

    for section, key in (("algorithm", "lr"), ("dynamics", "lr"), ("exploration", "epsilon"), ("exploration", "sigma")):
        value = data[section].get(key)
        if isinstance(value, str) and value not in data["schedulers"]:
            raise UnresolvedReferenceError(f"scheduler {value!r} is not defined", f"{section}.{key}")
    if expl["kind"] == "epsilon_greedy" and not isinstance(expl["epsilon"], str) and not 0 <= expl["epsilon"] <= 1:
        raise ConfigValueError("epsilon must lie in [0, 1]", "exploration.epsilon")

    discrete_actions = env["kind"] == "cartpole"
    if algo["kind"] == "dqn" and not discrete_actions:
        raise IncompatibleError(f"dqn needs a discrete action space; env {env['kind']!r} has continuous actions", "algorithm.kind")
    if algo["kind"] == "ilqr":
        if discrete_actions:
            raise IncompatibleError("ilqr needs continuous actions; cartpole is discrete", "algorithm.kind")
        if env["kind"] == "pendulum" and env["obs_mode"] != "raw":
            raise IncompatibleError("ilqr requires pendulum obs_mode = \"raw\"", "env.obs_mode")
    if algo["kind"] == "dqn":
        if not 0 <= algo["gamma"] < 1:
            raise ConfigValueError("gamma must lie in [0, 1)", "algorithm.gamma")
    if expl["kind"] == "gaussian" and discrete_actions:
        raise IncompatibleError("gaussian exploration needs continuous actions", "exploration.kind")
    if dyn["kind"] == "linear" and discrete_actions:
        raise IncompatibleError("linear dynamics need continuous actions", "dynamics.kind")
    if algo.get("model") == "learned":
        if dyn["kind"] == "none":
            raise IncompatibleError("algorithm.model = \"learned\" needs a [dynamics] model", "dynamics.kind")
        if flow["kind"] != "dyna":
            raise IncompatibleError("a learned model is only fitted by the dyna flow", "flow.kind")
    if flow["kind"] == "dyna" and dyn["kind"] == "none":
        raise IncompatibleError("the dyna flow needs a [dynamics] model", "dynamics.kind")

    for key in ("samples_per_cycle", "train_steps_per_cycle", "test_every", "n_test_episodes"):
        if flow[key] < 1:
            raise ConfigValueError("must be >= 1", f"flow.{key}")
    if flow["max_real_samples"] <= 0 and flow["max_cycles"] <= 0:
        raise ConfigValueError("set max_real_samples or max_cycles to a positive value", "flow.max_cycles")
    if flow["kind"] == "dyna":
        for key in ("k_sim", "model_fit_every"):
            if flow[key] < 0:
                raise ConfigValueError("must be >= 0", f"flow.{key}")
        for key in ("sim_rollout_length", "sim_capacity", "model_epochs", "model_minibatch"):
            if flow[key] < 1:
                raise ConfigValueError("must be >= 1", f"flow.{key}")
    if env["kind"] == "lti":
        _check_lti(env)


def _check_lti(env: dict) -> None:
    def shape(mat):
        return (len(mat), len(mat[0]) if mat and isinstance(mat[0], list) else 0)

    n, m = shape(env["B"])
    for key, want in (("A", (n, n)), ("Q", (n, n)), ("R", (m, m))):
        if shape(env[key]) != want or any(len(row) != want[1] for row in env[key]):
            raise ConfigValueError(f"expected a {want[0]}x{want[1]} matrix", f"env.{key}")
    if len(env["x0"]) != n or any(isinstance(v, list) for v in env["x0"]):
        raise ConfigValueError(f"expected a vector of length {n}", "env.x0")
