"""Dynamics models: a linear least-squares model and an MLP delta model."""

from __future__ import annotations

import json

import numpy as np

from .core import Batch, Box, Discrete, RngStream, Space
from .errors import ContractError, EmptySourceError, FitError
from .fapprox import AdamState, Mlp, adam_step, load_params, save_params

STD_FLOOR = 1e-8


class DynamicsModel:
    """Common surface of every one-step model ``s' = f(s, a)``.

    Subclasses implement :meth:`predict_batch`; the rest is derived from it.
    Discrete actions are integer arrays of shape ``(N,)``, Box actions
    float arrays of shape ``(N, m)``.
    """

    obs_dim: int
    action_space: Space

    def _check(self, s, a):
        s = np.asarray(s, dtype=np.float64)
        if s.shape != (self.obs_dim,):
            raise ContractError(f"state has shape {s.shape}, model expects ({self.obs_dim},)")
        if isinstance(self.action_space, Discrete):
            if np.ndim(a) != 0:
                raise ContractError("discrete-action model expects a scalar action index")
            a = np.asarray(int(a))
        else:
            a = np.asarray(a, dtype=np.float64)
            if a.shape != self.action_space.shape:
                raise ContractError(f"action has shape {a.shape}, model expects {self.action_space.shape}")
        return s, a

    def predict(self, s, a) -> np.ndarray:
        s, a = self._check(s, a)
        return self.predict_batch(s[None], a[None])[0]

    def predict_batch(self, states, actions) -> np.ndarray:
        raise NotImplementedError

    def rollout_batch(self, states0, actions) -> np.ndarray:
        """States of shape ``(N, H+1, n)`` for action sequences ``(N, H, ...)``."""
        states0 = np.asarray(states0, dtype=np.float64)
        n, horizon = actions.shape[:2]
        out = np.empty((n, horizon + 1, self.obs_dim))
        out[:, 0] = states0
        for t in range(horizon):
            out[:, t + 1] = self.predict_batch(out[:, t], actions[:, t])
        return out

    def jacobians(self, x, u, h: float = 1e-5):
        """``(f_x, f_u)`` by central differences."""
        x = np.asarray(x, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64)
        n, m = x.shape[0], u.shape[0]
        # all 2(n+m) perturbed points evaluated in one batch
        xs = np.repeat(x[None], 2 * (n + m), axis=0)
        us = np.repeat(u[None], 2 * (n + m), axis=0)
        for i in range(n):
            xs[2 * i, i] += h
            xs[2 * i + 1, i] -= h
        for j in range(m):
            us[2 * (n + j), j] += h
            us[2 * (n + j) + 1, j] -= h
        f = self.predict_batch(xs, us)
        diff = (f[0::2] - f[1::2]) / (2.0 * h)
        return diff[:n].T.copy(), diff[n:].T.copy()


def model_predict(model: DynamicsModel, state, action) -> np.ndarray:
    return model.predict(state, action)


def model_rollout(model: DynamicsModel, s0, actions) -> np.ndarray:
    """States ``s0, s1, ..., sH`` obtained by feeding ``actions`` through the model."""
    s0 = np.asarray(s0, dtype=np.float64)
    if s0.shape != (model.obs_dim,):
        raise ContractError(f"s0 has shape {s0.shape}, model expects ({model.obs_dim},)")
    discrete = isinstance(model.action_space, Discrete)
    actions = np.asarray(actions, dtype=np.int64 if discrete else np.float64)
    if len(actions) == 0:
        return s0[None].copy()
    if not discrete:
        actions = actions.reshape(len(actions), -1)
        if actions.shape[1] != model.action_space.dim:
            raise ContractError(f"actions have width {actions.shape[1]}, model expects {model.action_space.dim}")
    return model.rollout_batch(s0[None], actions[None])[0]


# ---------------------------------------------------------------------------
# Linear model
# ---------------------------------------------------------------------------


class LinearDynamics(DynamicsModel):
    """``s' = A s + B a + c``."""

    def __init__(self, A, B, c=None, action_space: Space | None = None):
        self.A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        self.B = np.atleast_2d(np.asarray(B, dtype=np.float64))
        n, m = self.B.shape
        if self.A.shape != (n, n):
            raise ContractError(f"A has shape {self.A.shape}, B implies ({n}, {n})")
        self.c = np.zeros(n) if c is None else np.asarray(c, dtype=np.float64).reshape(n)
        self.obs_dim = n
        self.action_space = action_space or Box(np.full(m, -np.finfo(float).max / 4), np.full(m, np.finfo(float).max / 4))

    def predict_batch(self, states, actions):
        actions = np.asarray(actions, dtype=np.float64).reshape(len(states), -1)
        return states @ self.A.T + actions @ self.B.T + self.c

    def jacobians(self, x, u, h=None):
        return self.A.copy(), self.B.copy()


def _column_names(n, m):
    return [f"state[{i}]" for i in range(n)] + [f"action[{j}]" for j in range(m)] + ["offset"]


def fit_linear(batch: Batch, ridge: float = 1e-8, action_space: Space | None = None) -> LinearDynamics:
    """Least-squares fit of ``next_state = A s + B a + c`` over a batch.

    Solves the ridge-damped normal equations, followed by one refinement
    step against the undamped residual so the damping does not bias exact
    recovery on noiseless data.
    """
    states = np.asarray(batch.states, dtype=np.float64)
    actions = np.asarray(batch.actions, dtype=np.float64).reshape(len(states), -1)
    n, m = states.shape[1], actions.shape[1]
    X = np.hstack([states, actions, np.ones((len(states), 1))])
    Y = np.asarray(batch.next_states, dtype=np.float64)
    p = n + m + 1
    if len(X) < p:
        raise FitError(f"need at least {p} transitions to fit a linear model, got {len(X)}")
    names = _column_names(n, m)
    rank = 0
    for k in range(p):
        r = np.linalg.matrix_rank(X[:, : k + 1])
        if r == rank:
            raise FitError(f"regressors are rank deficient: {names[k]} is linearly dependent on earlier columns")
        rank = r
    G = X.T @ X
    rhs = X.T @ Y
    damped = G + ridge * np.eye(p)
    theta = np.linalg.solve(damped, rhs)
    theta += np.linalg.solve(damped, rhs - G @ theta)
    A = theta[:n].T
    B = theta[n : n + m].T
    c = theta[-1]
    return LinearDynamics(A, B, c, action_space)


# ---------------------------------------------------------------------------
# MLP delta model
# ---------------------------------------------------------------------------


class MlpDynamics(DynamicsModel):
    """Predicts ``s + denorm(net(norm([s, a])))``.

    Discrete actions are one-hot encoded before normalisation. Statistics
    start at mean 0 / std 1 and change only in :meth:`refit_stats`.
    """

    def __init__(self, obs_dim: int, action_space: Space, hidden=(64, 64), activation: str = "tanh",
                 lr: float = 1e-3, rng: RngStream | None = None):
        self.obs_dim = int(obs_dim)
        self.action_space = action_space
        self.act_dim = action_space.n if isinstance(action_space, Discrete) else action_space.dim
        in_dim = self.obs_dim + self.act_dim
        self.net = Mlp([in_dim, *hidden, self.obs_dim], activation, rng)
        self.opt = AdamState(lr=lr)
        self.lr_source = None  # optional callable overriding opt.lr per fit
        self.in_mean = np.zeros(in_dim)
        self.in_std = np.ones(in_dim)
        self.out_mean = np.zeros(self.obs_dim)
        self.out_std = np.ones(self.obs_dim)

    def encode(self, states, actions) -> np.ndarray:
        states = np.asarray(states, dtype=np.float64)
        if isinstance(self.action_space, Discrete):
            onehot = np.zeros((len(states), self.act_dim))
            onehot[np.arange(len(states)), np.asarray(actions, dtype=np.int64)] = 1.0
            return np.hstack([states, onehot])
        return np.hstack([states, np.asarray(actions, dtype=np.float64).reshape(len(states), -1)])

    def normalize_inputs(self, x):
        return (x - self.in_mean) / self.in_std

    def normalize_deltas(self, d):
        return (d - self.out_mean) / self.out_std

    def denormalize_deltas(self, y):
        return y * self.out_std + self.out_mean

    def refit_stats(self, batch: Batch) -> None:
        if len(batch) == 0:
            raise EmptySourceError("cannot compute normalisation statistics from an empty batch")
        x = self.encode(batch.states, batch.actions)
        d = batch.next_states - batch.states
        self.in_mean = x.mean(axis=0)
        self.in_std = np.maximum(x.std(axis=0), STD_FLOOR)
        self.out_mean = d.mean(axis=0)
        self.out_std = np.maximum(d.std(axis=0), STD_FLOOR)

    def predict_batch(self, states, actions):
        states = np.asarray(states, dtype=np.float64)
        y = self.net.forward(self.normalize_inputs(self.encode(states, actions)))
        return states + self.denormalize_deltas(y)

    def train_batch(self, inputs, targets, lr=None) -> float:
        """One Adam step on normalised inputs/targets; returns the MSE."""
        out, cache = self.net.forward(inputs, keep=True)
        diff = out - targets
        n = len(inputs)
        loss = float(np.sum(diff * diff) / n)
        grads = self.net.backprop(inputs, 2.0 * diff / n, cache)
        adam_step(self.net.params(), grads, self.opt, lr)
        return loss

    def save(self, path) -> None:
        save_params(
            self.net,
            path,
            extra={"model": "mlp", "obs_dim": self.obs_dim, "action_space": _space_to_dict(self.action_space)},
            arrays={"in_mean": self.in_mean, "in_std": self.in_std, "out_mean": self.out_mean, "out_std": self.out_std},
        )

    @classmethod
    def load(cls, path) -> "MlpDynamics":
        net, header, arrays = load_params(path)
        if header.get("model") != "mlp":
            raise ContractError(f"{path}: not an MlpDynamics checkpoint")
        model = cls(header["obs_dim"], _space_from_dict(header["action_space"]), hidden=net.sizes[1:-1], activation=net.activation)
        model.net = net
        for k in ("in_mean", "in_std", "out_mean", "out_std"):
            setattr(model, k, np.array(arrays[k]))
        return model


def fit_mlp_epoch(model: MlpDynamics, batch: Batch, minibatch: int, rng: RngStream, lr=None) -> float:
    """One shuffled pass of minibatch Adam over ``batch``; returns mean minibatch loss."""
    n = len(batch)
    if n == 0:
        raise EmptySourceError("cannot fit on an empty batch")
    x = model.normalize_inputs(model.encode(batch.states, batch.actions))
    y = model.normalize_deltas(batch.next_states - batch.states)
    order = rng.permutation(n)
    losses = []
    for start in range(0, n, minibatch):
        idx = order[start : start + minibatch]
        losses.append(model.train_batch(x[idx], y[idx], lr))
    return float(np.mean(losses))


def save_linear(model: LinearDynamics, path) -> None:
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps({"format": "mbrlkit-linear-v1", "model": "linear"})), A=model.A, B=model.B, c=model.c)


def load_linear(path) -> LinearDynamics:
    with np.load(path, allow_pickle=False) as data:
        return LinearDynamics(data["A"], data["B"], data["c"])


def _space_to_dict(space: Space) -> dict:
    if isinstance(space, Discrete):
        return {"kind": "discrete", "n": space.n}
    return {"kind": "box", "lower": space.lower.tolist(), "upper": space.upper.tolist()}


def _space_from_dict(d: dict) -> Space:
    if d["kind"] == "discrete":
        return Discrete(d["n"])
    return Box(d["lower"], d["upper"])
