"""Native analytic environments: pendulum swing-up, cart-pole and a linear plant.

Every environment exposes ``spec``, ``reset(rng)``, ``step(action)`` and two
analytic helpers used by planners and simulated experience:
``reward_batch(s, a, s_next)`` and ``terminal_batch(s_next)``. ``true_model()``
returns a :class:`~mbrlkit.dynamics.DynamicsModel` that reproduces ``step`` on
observations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import Box, Discrete, RngStream, Space
from .dynamics import DynamicsModel, LinearDynamics
from .errors import ContractError, UsageError
from .kernels import wrap_angle


@dataclass(frozen=True)
class EnvSpec:
    obs_space: Space
    action_space: Space
    max_episode_steps: int

    def __post_init__(self):
        if self.max_episode_steps < 1:
            raise ContractError("max_episode_steps must be >= 1")


class Env:
    """Shared episode bookkeeping."""

    spec: EnvSpec

    def __init__(self):
        self.steps = 0
        self._ready = False

    def _begin_step(self):
        if not self._ready:
            raise UsageError("step() called before reset() or after the episode ended")

    def _end_step(self, failed: bool) -> bool:
        self.steps += 1
        done = failed or self.steps >= self.spec.max_episode_steps
        if done:
            self._ready = False
        return done

    def terminal_batch(self, next_states) -> np.ndarray:
        """Failure predicate on observations (time limits excluded)."""
        return np.zeros(np.shape(next_states)[:-1], dtype=bool)


# ---------------------------------------------------------------------------
# Pendulum
# ---------------------------------------------------------------------------


class PendulumEnv(Env):
    """Torque-limited pendulum, upright at ``theta = 0``.

    Observations are ``(cos, sin, thetadot)`` in ``trig`` mode and
    ``(wrap(theta), thetadot)`` in ``raw`` mode. Episodes are fixed-length.
    """

    def __init__(self, g=10.0, m=1.0, l=1.0, dt=0.05, max_torque=2.0, max_speed=8.0,
                 obs_mode="trig", max_episode_steps=200, init_theta=math.pi, init_speed=1.0):
        super().__init__()
        if obs_mode not in ("trig", "raw"):
            raise ContractError(f"obs_mode must be 'trig' or 'raw', got {obs_mode!r}")
        self.g, self.m, self.l, self.dt = float(g), float(m), float(l), float(dt)
        self.max_torque, self.max_speed = float(max_torque), float(max_speed)
        self.obs_mode = obs_mode
        self.init_theta, self.init_speed = float(init_theta), float(init_speed)
        if obs_mode == "trig":
            obs = Box([-1.0, -1.0, -self.max_speed], [1.0, 1.0, self.max_speed])
        else:
            obs = Box([-math.pi, -self.max_speed], [math.pi, self.max_speed])
        act = Box([-self.max_torque], [self.max_torque])
        self.spec = EnvSpec(obs, act, int(max_episode_steps))
        self.theta = 0.0
        self.thetadot = 0.0

    @property
    def params(self):
        return (self.g, self.m, self.l, self.dt, self.max_torque, self.max_speed)

    def observe(self, theta, thetadot) -> np.ndarray:
        if self.obs_mode == "trig":
            return np.array([math.cos(theta), math.sin(theta), thetadot])
        return np.array([float(wrap_angle(theta)), thetadot])

    def angles(self, obs):
        """``(theta, thetadot)`` arrays from observations of either mode."""
        obs = np.asarray(obs, dtype=np.float64)
        if self.obs_mode == "trig":
            return np.arctan2(obs[..., 1], obs[..., 0]), obs[..., 2]
        return obs[..., 0], obs[..., 1]

    def set_state(self, theta, thetadot):
        self.theta, self.thetadot = float(theta), float(thetadot)
        self.steps = 0
        self._ready = True
        return self.observe(self.theta, self.thetadot)

    def reset(self, rng: RngStream) -> np.ndarray:
        theta = rng.uniform(-self.init_theta, self.init_theta)
        speed = rng.uniform(-self.init_speed, self.init_speed)
        return self.set_state(theta, speed)

    def step(self, action):
        self._begin_step()
        u = float(np.clip(np.asarray(action, dtype=np.float64).reshape(-1)[0], -self.max_torque, self.max_torque))
        reward = -(float(wrap_angle(self.theta)) ** 2 + 0.1 * self.thetadot**2 + 0.001 * u * u)
        th, thd = kernels.pendulum_rollout(
            np.array([self.theta]), np.array([self.thetadot]), np.array([[u]]), *self.params
        )
        self.theta, self.thetadot = float(th[0, 1]), float(thd[0, 1])
        done = self._end_step(False)
        return self.observe(self.theta, self.thetadot), reward, done

    def reward_batch(self, states, actions, next_states=None):
        th, thd = self.angles(states)
        u = np.clip(np.asarray(actions, dtype=np.float64)[..., 0], -self.max_torque, self.max_torque)
        return -(wrap_angle(th) ** 2 + 0.1 * thd**2 + 0.001 * u * u)

    def true_model(self) -> "PendulumModel":
        return PendulumModel(self)


class PendulumModel(DynamicsModel):
    """Exact pendulum dynamics acting on observations."""

    def __init__(self, env: PendulumEnv):
        self.env = env
        self.obs_dim = env.spec.obs_space.dim
        self.action_space = env.spec.action_space

    def _obs(self, th, thd):
        if self.env.obs_mode == "trig":
            return np.stack([np.cos(th), np.sin(th), thd], axis=-1)
        return np.stack([wrap_angle(th), thd], axis=-1)

    def rollout_batch(self, states0, actions):
        th0, thd0 = self.env.angles(states0)
        acts = np.ascontiguousarray(np.asarray(actions, dtype=np.float64)[..., 0])
        th, thd = kernels.pendulum_rollout(np.ascontiguousarray(th0), np.ascontiguousarray(thd0), acts, *self.env.params)
        out = self._obs(th, thd)
        out[:, 0] = states0
        return out

    def predict_batch(self, states, actions):
        actions = np.asarray(actions, dtype=np.float64).reshape(len(states), 1, -1)
        return self.rollout_batch(np.asarray(states, dtype=np.float64), actions)[:, 1]


# ---------------------------------------------------------------------------
# Cart-pole
# ---------------------------------------------------------------------------


class CartPoleEnv(Env):
    """Cart-pole balancing; action 0 pushes left, 1 pushes right.

    Reward is 1.0 for every step that does not cross a failure threshold and
    0.0 for the step that does.
    """

    def __init__(self, gravity=9.8, masscart=1.0, masspole=0.1, half_length=0.5, force_mag=10.0,
                 dt=0.02, x_threshold=2.4, theta_threshold=12 * math.pi / 180, max_episode_steps=200,
                 init_range=0.05):
        super().__init__()
        self.gravity, self.masscart, self.masspole = float(gravity), float(masscart), float(masspole)
        self.half_length, self.force_mag, self.dt = float(half_length), float(force_mag), float(dt)
        self.x_threshold, self.theta_threshold = float(x_threshold), float(theta_threshold)
        self.init_range = float(init_range)
        big = 1e6
        obs = Box([-2 * self.x_threshold, -big, -2 * self.theta_threshold, -big],
                  [2 * self.x_threshold, big, 2 * self.theta_threshold, big])
        self.spec = EnvSpec(obs, Discrete(2), int(max_episode_steps))
        self.state = np.zeros(4)

    @property
    def params(self):
        return (self.gravity, self.masscart, self.masspole, self.half_length, self.dt)

    def forces(self, actions):
        return np.where(np.asarray(actions) == 1, self.force_mag, -self.force_mag).astype(np.float64)

    def set_state(self, state):
        self.state = np.array(state, dtype=np.float64)
        self.steps = 0
        self._ready = True
        return self.state.copy()

    def reset(self, rng: RngStream) -> np.ndarray:
        return self.set_state(rng.uniform(-self.init_range, self.init_range, size=4))

    def step(self, action):
        self._begin_step()
        a = int(action)
        if a not in (0, 1):
            raise ContractError(f"cart-pole action must be 0 or 1, got {action!r}")
        out = kernels.cartpole_rollout(self.state[None], self.forces([[a]]), *self.params)
        self.state = out[0, 1].copy()
        failed = bool(self.terminal_batch(self.state))
        done = self._end_step(failed)
        return self.state.copy(), 0.0 if failed else 1.0, done

    def terminal_batch(self, next_states):
        s = np.asarray(next_states)
        return (np.abs(s[..., 0]) > self.x_threshold) | (np.abs(s[..., 2]) > self.theta_threshold)

    def reward_batch(self, states, actions, next_states):
        return np.where(self.terminal_batch(next_states), 0.0, 1.0)

    def true_model(self) -> "CartPoleModel":
        return CartPoleModel(self)


class CartPoleModel(DynamicsModel):
    def __init__(self, env: CartPoleEnv):
        self.env = env
        self.obs_dim = 4
        self.action_space = env.spec.action_space

    def rollout_batch(self, states0, actions):
        forces = np.ascontiguousarray(self.env.forces(actions))
        return kernels.cartpole_rollout(np.ascontiguousarray(states0, dtype=np.float64), forces, *self.env.params)

    def predict_batch(self, states, actions):
        actions = np.asarray(actions).reshape(len(states), 1)
        return self.rollout_batch(states, actions)[:, 1]


# ---------------------------------------------------------------------------
# Linear plant
# ---------------------------------------------------------------------------


class LtiEnv(Env):
    """``x' = A x + B u`` with reward ``-(x'Qx + u'Ru)`` and a deterministic start."""

    def __init__(self, A, B, Q, R, x0, horizon=50, action_bound=1e3):
        super().__init__()
        self.A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        self.B = np.atleast_2d(np.asarray(B, dtype=np.float64))
        self.Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
        self.R = np.atleast_2d(np.asarray(R, dtype=np.float64))
        self.x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
        n, m = self.B.shape
        for name, mat, shape in (("A", self.A, (n, n)), ("Q", self.Q, (n, n)), ("R", self.R, (m, m))):
            if mat.shape != shape:
                raise ContractError(f"{name} has shape {mat.shape}, expected {shape}")
        if self.x0.shape != (n,):
            raise ContractError(f"x0 has length {self.x0.shape[0]}, expected {n}")
        if not (np.allclose(self.Q, self.Q.T) and np.allclose(self.R, self.R.T)):
            raise ContractError("Q and R must be symmetric")
        bound = float(action_bound)
        big = 1e12
        self.spec = EnvSpec(Box(np.full(n, -big), np.full(n, big)), Box(np.full(m, -bound), np.full(m, bound)), int(horizon))
        self.x = self.x0.copy()

    def set_state(self, x):
        self.x = np.array(x, dtype=np.float64)
        self.steps = 0
        self._ready = True
        return self.x.copy()

    def reset(self, rng: RngStream | None = None) -> np.ndarray:
        return self.set_state(self.x0)

    def step(self, action):
        self._begin_step()
        u = self.spec.action_space.clip(np.asarray(action, dtype=np.float64).reshape(-1))
        reward = -float(self.x @ self.Q @ self.x + u @ self.R @ u)
        self.x = self.A @ self.x + self.B @ u
        done = self._end_step(False)
        return self.x.copy(), reward, done

    def reward_batch(self, states, actions, next_states=None):
        x = np.asarray(states, dtype=np.float64)
        u = self.spec.action_space.clip(np.asarray(actions, dtype=np.float64))
        return -(np.einsum("...i,ij,...j->...", x, self.Q, x) + np.einsum("...i,ij,...j->...", u, self.R, u))

    def true_model(self) -> LinearDynamics:
        return LinearDynamics(self.A, self.B, np.zeros(self.A.shape[0]), self.spec.action_space)


ENV_KINDS = {"pendulum": PendulumEnv, "cartpole": CartPoleEnv, "lti": LtiEnv}


def make_env(kind: str, **params) -> Env:
    try:
        cls = ENV_KINDS[kind]
    except KeyError:
        raise ContractError(f"unknown environment kind {kind!r}") from None
    return cls(**params)


def env_reset(env: Env, rng: RngStream):
    return env.reset(rng)


def env_step(env: Env, action):
    return env.step(action)
