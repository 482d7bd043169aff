"""Build an experiment from a validated config and run it to completion.

Result directory layout::

    <out_dir>/config.echo      normalised config (TOML)
    <out_dir>/records/<key>.csv
    <out_dir>/report.json      final report, written last ("status" is
                               "completed" or "failed")
    <out_dir>/log.txt

Random streams are forked from ``experiment.seed`` with a fixed id per
component (see ``STREAMS``), so adding a component never shifts the draws of
the existing ones.
"""

from __future__ import annotations

import json
import shutil
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..algos.dqn import DqnLearner
from ..algos.ilqr import IlqrSolver, QuadraticCost
from ..algos.mpc import MpcPlanner
from ..core import ReplayBuffer, RngStream
from ..dynamics import LinearDynamics, MlpDynamics
from ..envs import LtiEnv, PendulumEnv, make_env
from ..errors import ContractError, UsageError
from ..flow import (
    Agent,
    DqnPolicy,
    DynaFlow,
    EpsilonGreedy,
    FlowRunner,
    GaussianNoise,
    IlqrPolicy,
    MpcPolicy,
    TrainTestFlow,
)
from ..monitor import Monitor, export_csv
from .config import ExperimentConfig
from .recorder import LogicalClock, Recorder, WallClock
from .status import ExponentialDecay, GlobalStatus, LinearDecay, PiecewiseConstant, resolve

STREAMS = {
    "env": 1,
    "exploration": 2,
    "buffer": 3,
    "net_init": 4,
    "model": 5,
    "planner": 6,
    "test_env": 7,
    "sim": 8,
}

RECORD_KEYS = ("train_loss", "train_return", "test_return")


class RunExistsError(UsageError):
    """The output directory already holds a finished run."""


@dataclass
class Experiment:
    config: ExperimentConfig
    status: GlobalStatus
    recorder: Recorder
    env: object
    agent: Agent
    runner: FlowRunner
    model: object = None


def _env_params(section: dict) -> dict:
    return {k: v for k, v in section.items() if k != "kind"}


def build_schedulers(cfg: ExperimentConfig) -> dict:
    out = {}
    for name, s in cfg["schedulers"].items():
        if s["kind"] == "linear":
            out[name] = LinearDecay(s["init"], s["final"], s["span"], s["over"])
        elif s["kind"] == "exponential":
            out[name] = ExponentialDecay(s["init"], s["rate"], s["over"])
        else:
            out[name] = PiecewiseConstant(tuple(s["breakpoints"]), tuple(s["values"]), s["over"])
    return out


def _source(value, schedulers):
    return schedulers[value] if isinstance(value, str) else value


def ilqr_cost_for(env):
    if isinstance(env, PendulumEnv):
        return QuadraticCost(np.diag([1.0, 0.1]), [[0.001]])
    if isinstance(env, LtiEnv):
        return QuadraticCost(env.Q, env.R)
    raise ContractError(f"no quadratic cost defined for {type(env).__name__}")


def build(cfg: ExperimentConfig, monitor: Monitor | None = None) -> Experiment:
    seed = cfg.seed

    def rng(name):
        return RngStream(seed, STREAMS[name])

    status = GlobalStatus()
    clock = LogicalClock() if cfg["monitor"]["clock"] == "logical" else WallClock()
    recorder = Recorder(clock)
    schedulers = build_schedulers(cfg)

    # environment
    env = make_env(cfg["env"]["kind"], **_env_params(cfg["env"]))
    test_env = make_env(cfg["env"]["kind"], **_env_params(cfg["env"]))
    obs_dim = env.spec.obs_space.dim
    space = env.spec.action_space

    # dynamics model
    dyn = cfg["dynamics"]
    model = None
    if dyn["kind"] == "linear":
        n, m = obs_dim, space.dim
        model = LinearDynamics(np.zeros((n, n)), np.zeros((n, m)), np.zeros(n), space)
        model.ridge = dyn["ridge"]
    elif dyn["kind"] == "mlp":
        model = MlpDynamics(obs_dim, space, tuple(dyn["hidden"]), dyn["activation"], rng=rng("model"))
        lr_src = _source(dyn["lr"], schedulers)
        model.lr_source = lambda: resolve(lr_src, status)

    # algorithm
    algo = cfg["algorithm"]
    kind = algo["kind"]
    plan_model = None
    if kind in ("mpc", "ilqr"):
        plan_model = env.true_model() if algo["model"] == "true" else model
    if kind == "dqn":
        learner = DqnLearner(obs_dim, space.n, tuple(algo["hidden"]), algo["activation"], gamma=algo["gamma"],
                             batch_size=algo["batch_size"], sync_interval=algo["sync_interval"], rng=rng("net_init"))
        lr_src = _source(algo["lr"], schedulers)
        learner.lr = lambda: resolve(lr_src, status)
        policy = DqnPolicy(learner)
    elif kind == "mpc":
        def cost(s, a, s_next):
            return -env.reward_batch(s, a, s_next)

        planner = MpcPlanner(plan_model, cost, space, algo["horizon"], algo["n_candidates"])
        policy = MpcPolicy(planner, rng("planner"))
    else:
        solver = IlqrSolver(algo["horizon"], algo["max_iter"], algo["mu_init"], algo["mu_min"], algo["mu_max"],
                            algo["mu_factor"], algo["tol"], algo["line_search_steps"],
                            u_lower=space.lower, u_upper=space.upper)
        policy = IlqrPolicy(solver, plan_model, ilqr_cost_for(env), space.dim, algo["init"])

    # agent
    ex = cfg["exploration"]
    exploration = None
    if ex["kind"] == "epsilon_greedy":
        exploration = EpsilonGreedy(_source(ex["epsilon"], schedulers))
    elif ex["kind"] == "gaussian":
        exploration = GaussianNoise(_source(ex["sigma"], schedulers))
    agent = Agent(policy, env, ReplayBuffer(algo["buffer_capacity"]), exploration, rng("env"), rng("exploration"))

    # control flow
    fl = {k: v for k, v in cfg["flow"].items() if k != "kind"}
    flow = DynaFlow(**fl) if cfg["flow"]["kind"] == "dyna" else TrainTestFlow(**fl)
    runner = FlowRunner(flow, agent, status, recorder, rng("buffer"), test_env, rng("test_env"),
                        model=model, model_rng=rng("model"), sim_rng=rng("sim"), monitor=monitor)
    recorder.declare(*RECORD_KEYS)
    if isinstance(flow, DynaFlow):
        recorder.declare("model_loss")
    return Experiment(cfg, status, recorder, env, agent, runner, model)


def _flush_records(exp: Experiment, out: Path) -> dict:
    rec_dir = out / "records"
    rec_dir.mkdir(parents=True, exist_ok=True)
    x_key = exp.config["monitor"]["x_axis"]
    return {k: export_csv(exp.recorder, k, rec_dir / f"{k}.csv", x_key) for k in exp.recorder.keys()}


def experiment_run(cfg: ExperimentConfig, overwrite: bool = False, console: bool | None = None) -> Path:
    """Run ``cfg`` and return its result directory."""
    out = Path(cfg["experiment"]["out_dir"])
    if (out / "report.json").exists():
        if not overwrite:
            raise RunExistsError(f"{out} already holds a run report; pass overwrite to replace it")
        for name in ("records", "report.json", "log.txt", "config.echo"):
            p = out / name
            if p.is_dir():
                shutil.rmtree(p)
            elif p.exists():
                p.unlink()
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.echo").write_text(cfg.dumps(), encoding="utf-8")
    mon_cfg = cfg["monitor"]
    monitor = Monitor(out / "log.txt", mon_cfg["log_level"], mon_cfg["console"] if console is None else console)
    t0 = time.perf_counter()
    exp = None
    try:
        exp = build(cfg, monitor)
        monitor.info("experiment start", {"name": cfg["experiment"]["name"], "seed": cfg.seed}, exp.status)
        final = exp.runner.run()
    except Exception as exc:
        monitor.error("experiment failed", {"error": f"{type(exc).__name__}: {exc}"}, exp.status if exp else None)
        report = {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}
        if exp is not None:
            report["records"] = _flush_records(exp, out)
            report["counters"] = exp.status.snapshot()
        (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")
        monitor.close()
        raise
    counts = _flush_records(exp, out)
    report = {
        "status": "completed",
        "name": cfg["experiment"]["name"],
        "seed": cfg.seed,
        "records": counts,
        "elapsed_seconds": round(time.perf_counter() - t0, 3),
        **final.to_dict(),
    }
    monitor.info("experiment done", {"cycles": final.cycles, "last_test_return": final.last_test_return}, exp.status)
    monitor.close()
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")
    return out
