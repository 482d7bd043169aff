"""Training engine: exploration strategies, policies, the agent and control flows.

A control flow owns the schedule of one experiment: how many real samples to
collect per cycle, how many optimisation steps follow, when to refit the
dynamics model, when to evaluate and when to stop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .algos.dqn import DqnLearner
from .algos.ilqr import IlqrSolver, ilqr_solve
from .algos.mpc import MpcPlanner
from .core import Batch, Box, Discrete, ReplayBuffer, RngStream, Space, Transition, sample_union
from .dynamics import LinearDynamics, MlpDynamics, fit_linear, fit_mlp_epoch
from .errors import ContractError, ConvergenceError
from .expmgr.recorder import Recorder
from .expmgr.status import GlobalStatus, resolve

# ---------------------------------------------------------------------------
# Exploration
# ---------------------------------------------------------------------------


@dataclass
class EpsilonGreedy:
    """With probability epsilon replace the greedy action by a uniform sample."""

    epsilon: object = 0.1  # constant or scheduler

    def __call__(self, greedy, space: Space, status: GlobalStatus, rng: RngStream):
        eps = resolve(self.epsilon, status)
        if not 0.0 <= eps <= 1.0:
            raise ContractError(f"epsilon must lie in [0, 1], got {eps}")
        if rng.random() < eps:
            return space.sample(rng)
        return greedy

    def batch(self, greedy, space: Space, status: GlobalStatus, rng: RngStream):
        eps = resolve(self.epsilon, status)
        n = len(greedy)
        swap = rng.random(n) < eps
        random = space.sample(rng, n)
        return np.where(swap if greedy.ndim == 1 else swap[:, None], random, greedy)


@dataclass
class GaussianNoise:
    """Additive N(0, sigma^2) noise per dimension, clipped to the action bounds."""

    sigma: object = 0.1

    def __call__(self, greedy, space: Space, status: GlobalStatus, rng: RngStream):
        sigma = resolve(self.sigma, status)
        if sigma < 0:
            raise ContractError(f"sigma must be >= 0, got {sigma}")
        greedy = np.asarray(greedy, dtype=np.float64)
        if sigma == 0.0:
            return greedy
        return space.clip(greedy + rng.normal(0.0, sigma, size=greedy.shape))

    def batch(self, greedy, space, status, rng):
        return self(greedy, space, status, rng)


def explore_action(strategy, greedy, space: Space, status: GlobalStatus, rng: RngStream):
    return strategy(greedy, space, status, rng)


# ---------------------------------------------------------------------------
# Policies: one ``act`` surface over learners and planners
# ---------------------------------------------------------------------------


class DqnPolicy:
    trainable = True

    def __init__(self, learner: DqnLearner):
        self.learner = learner

    def begin_episode(self, obs) -> None:
        pass

    def act(self, obs):
        return self.learner.act(obs)

    def act_batch(self, obs, space, rng):
        return self.learner.act_batch(obs)

    def train_step(self, batch: Batch) -> float:
        return self.learner.update(batch)


class MpcPolicy:
    """Replans every step. Simulated experience draws uniform actions instead."""

    trainable = False

    def __init__(self, planner: MpcPlanner, rng: RngStream):
        self.planner = planner
        self.rng = rng

    def begin_episode(self, obs) -> None:
        pass

    def act(self, obs):
        return self.planner.plan(obs, self.rng)

    def act_batch(self, obs, space, rng):
        return space.sample(rng, len(obs))


class IlqrPolicy:
    """Solves once from the episode's first state, then tracks ``U*`` with ``K_t``.

    When the episode outlives the plan it replans from the current state.
    ``init="lqr"`` seeds the solver with the closed-loop rollout of the
    infinite-horizon LQR controller for the model linearised at the goal;
    ``init="zeros"`` starts from zero controls.
    """

    trainable = False

    def __init__(self, solver: IlqrSolver, model, cost, action_dim: int, init: str = "lqr"):
        if init not in ("lqr", "zeros"):
            raise ContractError(f"init must be 'lqr' or 'zeros', got {init!r}")
        self.solver = solver
        self.model = model
        self.cost = cost
        self.action_dim = action_dim
        self.init = init
        self.plan = None
        self.t = 0
        self._lqr_gain = None

    def _goal_gain(self):
        if self._lqr_gain is None:
            self._lqr_gain = lqr_gain(self.model, self.cost, self.action_dim)
        return self._lqr_gain

    def initial_controls(self, x0):
        T = self.solver.horizon
        U = np.zeros((T, self.action_dim))
        if self.init == "zeros":
            return U
        K = self._goal_gain()
        goal = self.cost.x_goal
        space = getattr(self.model, "action_space", None)
        x = np.asarray(x0, dtype=np.float64)
        for t in range(T):
            u = -K @ (x - goal)
            U[t] = space.clip(u) if isinstance(space, Box) else u
            x = self.model.predict(x, U[t])
            if not np.all(np.isfinite(x)):
                return np.zeros((T, self.action_dim))
        return U

    def _replan(self, obs):
        x0 = np.asarray(obs, dtype=np.float64)
        try:
            plan = ilqr_solve(self.solver, self.model, self.cost, x0, self.initial_controls(x0))
        except ConvergenceError as exc:
            # keep acting on the best iterate rather than aborting the episode
            plan = exc.best
            if plan.K is None:
                plan.K = np.zeros((len(plan.U), self.action_dim, len(x0)))
        self.plan = plan
        self.t = 0

    def begin_episode(self, obs) -> None:
        self._replan(obs)

    def act(self, obs):
        if self.plan is None or self.t >= len(self.plan.U):
            self._replan(obs)
        t = self.t
        u = self.plan.U[t] + self.plan.K[t] @ (np.asarray(obs) - self.plan.X[t])
        self.t += 1
        return u

    def act_batch(self, obs, space, rng):
        return space.sample(rng, len(obs))


def lqr_gain(model, cost, action_dim: int, iters: int = 1000, tol: float = 1e-10):
    """Stationary LQR gain of ``model`` linearised at ``cost.x_goal`` with zero control.

    Iterates the discrete Riccati map; returns a zero gain when it does not
    settle (e.g. an uncontrollable linearisation).
    """
    goal = cost.x_goal
    A, B = model.jacobians(goal, np.zeros(action_dim))
    Q, R = cost.Q, cost.R
    P = Q.copy()
    K = np.zeros((action_dim, len(goal)))
    for _ in range(iters):
        S = R + B.T @ P @ B
        K = np.linalg.solve(S, B.T @ P @ A)
        P_new = Q + A.T @ P @ (A - B @ K)
        P_new = 0.5 * (P_new + P_new.T)
        if not np.all(np.isfinite(P_new)):
            return np.zeros_like(K)
        if np.max(np.abs(P_new - P)) < tol * max(1.0, np.max(np.abs(P))):
            return K
        P = P_new
    return K


# ---------------------------------------------------------------------------
# Agent
# ---------------------------------------------------------------------------


class Agent:
    """Couples a policy, an optional exploration strategy, an environment and
    a replay buffer, and carries the partially finished training episode."""

    def __init__(self, policy, env, buffer: ReplayBuffer, exploration=None,
                 env_rng: RngStream | None = None, explore_rng: RngStream | None = None):
        self.policy = policy
        self.env = env
        self.buffer = buffer
        self.exploration = exploration
        self.env_rng = env_rng or RngStream(0, 1)
        self.explore_rng = explore_rng or RngStream(0, 2)
        self.obs = None
        self.episode_return = 0.0
        self.finished_returns: list[float] = []

    @property
    def action_space(self) -> Space:
        return self.env.spec.action_space

    def act(self, obs, status: GlobalStatus, explore: bool = True):
        a = self.policy.act(obs)
        if explore and self.exploration is not None:
            a = self.exploration(a, self.action_space, status, self.explore_rng)
        return a

    def collect(self, n: int, status: GlobalStatus) -> Batch:
        """Step the training environment ``n`` times, storing every transition."""
        out = []
        for _ in range(n):
            if self.obs is None:
                self.obs = self.env.reset(self.env_rng)
                self.policy.begin_episode(self.obs)
                self.episode_return = 0.0
            a = self.act(self.obs, status)
            nxt, r, done = self.env.step(a)
            t = Transition(self.obs, a, r, nxt, done)
            self.buffer.push(t)
            out.append(t)
            self.episode_return += r
            if done:
                self.finished_returns.append(self.episode_return)
                self.obs = None
            else:
                self.obs = nxt
        status.update("total_real_samples", n)
        return Batch.from_transitions(out, self.env.spec.obs_space.dim, self.action_space.shape)


def agent_collect(agent: Agent, n: int, status: GlobalStatus) -> Batch:
    return agent.collect(n, status)


def evaluate(agent: Agent, env, n_episodes: int, rng: RngStream) -> list:
    """Greedy episodes on ``env``; touches neither the buffer nor training counters."""
    returns = []
    for _ in range(n_episodes):
        obs = env.reset(rng)
        agent.policy.begin_episode(obs)
        total, done = 0.0, False
        while not done:
            obs, r, done = env.step(agent.policy.act(obs))
            total += r
        returns.append(total)
    return returns


# ---------------------------------------------------------------------------
# Control flows
# ---------------------------------------------------------------------------


@dataclass
class CycleReport:
    cycle: int
    real_samples: int
    sim_samples: int = 0
    train_losses: list = field(default_factory=list)
    test_returns: list | None = None
    model_loss: float | None = None

    @property
    def test_return(self) -> float | None:
        return None if self.test_returns is None else float(np.mean(self.test_returns))


@dataclass
class FinalReport:
    cycles: int
    total_real_samples: int
    total_sim_samples: int
    total_train_steps: int
    total_test_episodes: int
    last_test_return: float | None
    test_history: list = field(default_factory=list)  # (total_real_samples, mean return)

    def to_dict(self) -> dict:
        return {
            "cycles": self.cycles,
            "total_real_samples": self.total_real_samples,
            "total_sim_samples": self.total_sim_samples,
            "total_train_steps": self.total_train_steps,
            "total_test_episodes": self.total_test_episodes,
            "last_test_return": self.last_test_return,
            "test_history": [list(p) for p in self.test_history],
        }


@dataclass
class TrainTestFlow:
    samples_per_cycle: int = 1
    train_steps_per_cycle: int = 1
    test_every: int = 1000
    n_test_episodes: int = 5
    max_real_samples: int = 0  # 0 disables this stop condition
    max_cycles: int = 0

    def __post_init__(self):
        for name in ("samples_per_cycle", "train_steps_per_cycle", "test_every", "n_test_episodes"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1")
        if self.max_real_samples <= 0 and self.max_cycles <= 0:
            raise ContractError("a flow needs max_real_samples or max_cycles as stop condition")

    def should_stop(self, status: GlobalStatus, cycles_run: int) -> bool:
        if self.max_real_samples > 0 and status.get("total_real_samples") >= self.max_real_samples:
            return True
        return self.max_cycles > 0 and cycles_run >= self.max_cycles


@dataclass
class DynaFlow(TrainTestFlow):
    """Train/test cycles augmented with model-generated experience.

    ``model_fit_every = 0`` disables fitting; simulated experience is only
    produced once the model has been fitted.
    """

    model_fit_every: int = 1
    k_sim: int = 4
    sim_rollout_length: int = 1
    sim_capacity: int = 50000
    model_epochs: int = 5
    model_minibatch: int = 64

    def __post_init__(self):
        super().__post_init__()
        if self.k_sim < 0 or self.model_fit_every < 0:
            raise ContractError("k_sim and model_fit_every must be >= 0")
        if self.sim_rollout_length < 1:
            raise ContractError("sim_rollout_length must be >= 1")


class FlowRunner:
    """Executes a flow against an agent, recording into a shared status/recorder.

    ``rng`` drives minibatch sampling; ``model_rng`` and ``sim_rng`` serve
    model fitting and simulated experience. Evaluation uses ``test_env``
    with ``test_rng`` so the training episode is never disturbed.
    """

    def __init__(self, flow, agent: Agent, status: GlobalStatus, recorder: Recorder, rng: RngStream,
                 test_env=None, test_rng: RngStream | None = None, model=None, model_rng=None, sim_rng=None,
                 monitor=None):
        self.flow = flow
        self.agent = agent
        self.status = status
        self.recorder = recorder
        self.rng = rng
        self.test_env = test_env if test_env is not None else agent.env
        self.test_rng = test_rng or rng.fork(7)
        self.model = model
        self.model_rng = model_rng or rng.fork(5)
        self.sim_rng = sim_rng or rng.fork(8)
        self.monitor = monitor
        self.sim_buffer = ReplayBuffer(getattr(flow, "sim_capacity", 1) or 1)
        self.model_active = False
        self.cycles_run = 0
        self.test_history: list = []
        self._returns_seen = 0

    # -- pieces -------------------------------------------------------------

    def _train(self, n_steps: int, buffers) -> list:
        policy = self.agent.policy
        if not policy.trainable:
            return []
        losses = []
        for _ in range(n_steps):
            if len(buffers) == 1:
                batch = buffers[0].sample(policy.learner.batch_size, self.rng)
            else:
                batch = sample_union(buffers, policy.learner.batch_size, self.rng)
            loss = policy.train_step(batch)
            self.status.update("total_train_steps", 1)
            self.recorder.append("train_loss", loss, self.status)
            losses.append(loss)
        return losses

    def _record_episodes(self):
        fresh = self.agent.finished_returns[self._returns_seen :]
        for r in fresh:
            self.recorder.append("train_return", r, self.status)
        self._returns_seen = len(self.agent.finished_returns)

    def _maybe_test(self, report: CycleReport):
        if report.cycle % self.flow.test_every:
            return
        returns = evaluate(self.agent, self.test_env, self.flow.n_test_episodes, self.test_rng)
        self.status.update("total_test_episodes", len(returns))
        report.test_returns = returns
        mean = float(np.mean(returns))
        self.recorder.append("test_return", mean, self.status)
        self.test_history.append((self.status.get("total_real_samples"), mean))
        if self.monitor is not None:
            self.monitor.emit("info", "evaluation", {"cycle": report.cycle, "test_return": round(mean, 6)}, self.status)

    def fit_model(self) -> float:
        data = self.agent.buffer.all()
        model = self.model
        if isinstance(model, LinearDynamics):
            fitted = fit_linear(data, getattr(model, "ridge", 1e-8), model.action_space)
            model.A, model.B, model.c = fitted.A, fitted.B, fitted.c
            pred = model.predict_batch(data.states, data.actions)
            loss = float(np.mean(np.sum((pred - data.next_states) ** 2, axis=1)))
        elif isinstance(model, MlpDynamics):
            model.refit_stats(data)
            lr = model.lr_source() if model.lr_source is not None else None
            loss = math.nan
            for _ in range(self.flow.model_epochs):
                loss = fit_mlp_epoch(model, data, self.flow.model_minibatch, self.model_rng, lr)
        else:
            raise ContractError(f"cannot fit model of type {type(model).__name__}")
        self.model_active = True
        return loss

    def simulate(self, n: int) -> Batch:
        """``n`` model transitions branching from replay-buffer states."""
        env = self.agent.env
        space = self.agent.action_space
        length = self.flow.sim_rollout_length
        n_branches = -(-n // length)
        states = self.agent.buffer.sample(n_branches, self.sim_rng).states
        parts = []
        produced = 0
        for _ in range(length):
            if produced >= n:
                break
            states = states[: n - produced]
            greedy = self.agent.policy.act_batch(states, space, self.sim_rng)
            actions = greedy
            if self.agent.exploration is not None:
                actions = self.agent.exploration.batch(greedy, space, self.status, self.sim_rng)
            nxt = self.model.predict_batch(states, actions)
            rewards = np.asarray(env.reward_batch(states, actions, nxt), dtype=np.float64)
            dones = np.asarray(env.terminal_batch(nxt), dtype=bool)
            parts.append(Batch(states, actions, rewards, nxt, dones))
            produced += len(states)
            states = nxt
        return Batch.concat(parts)

    # -- cycles -------------------------------------------------------------

    def cycle(self) -> CycleReport:
        flow = self.flow
        self.status.update("cycle_index", 1)
        c = self.status.get("cycle_index")
        report = CycleReport(c, flow.samples_per_cycle)
        self.agent.collect(flow.samples_per_cycle, self.status)
        self._record_episodes()
        if isinstance(flow, DynaFlow):
            self._dyna_middle(report)
        else:
            report.train_losses = self._train(flow.train_steps_per_cycle, [self.agent.buffer])
        self._maybe_test(report)
        self.cycles_run += 1
        return report

    def _dyna_middle(self, report: CycleReport):
        flow = self.flow
        c = report.cycle
        if flow.model_fit_every > 0 and c % flow.model_fit_every == 0:
            report.model_loss = self.fit_model()
            self.recorder.append("model_loss", report.model_loss, self.status)
        n_sim = flow.samples_per_cycle * flow.k_sim
        if self.model_active and n_sim > 0:
            sim = self.simulate(n_sim)
            self.sim_buffer.push_batch(sim)
            self.status.update("total_sim_samples", len(sim))
            report.sim_samples = len(sim)
        report.train_losses = self._train(flow.train_steps_per_cycle, [self.agent.buffer])
        if report.sim_samples:
            report.train_losses += self._train(flow.train_steps_per_cycle * flow.k_sim, [self.agent.buffer, self.sim_buffer])

    def run(self) -> FinalReport:
        while not self.flow.should_stop(self.status, self.cycles_run):
            self.cycle()
        s = self.status
        last = self.test_history[-1][1] if self.test_history else None
        return FinalReport(
            self.cycles_run,
            s.get("total_real_samples"),
            s.get("total_sim_samples"),
            s.get("total_train_steps"),
            s.get("total_test_episodes"),
            last,
            list(self.test_history),
        )


def flow_cycle(runner: FlowRunner) -> CycleReport:
    return runner.cycle()


def dyna_flow_cycle(runner: FlowRunner) -> CycleReport:
    if not isinstance(runner.flow, DynaFlow):
        raise ContractError("dyna_flow_cycle needs a runner configured with a DynaFlow")
    return runner.cycle()


def flow_run(runner: FlowRunner) -> FinalReport:
    return runner.run()
