"""Deep Q-learning with a target network."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..core import Batch, ReplayBuffer, RngStream
from ..fapprox import AdamState, Mlp, adam_step


def greedy_action(q_net: Mlp, obs) -> int:
    """Index of the largest action value; ties go to the lowest index."""
    return int(np.argmax(q_net.forward(obs)))


def dqn_targets(batch: Batch, target_net: Mlp, gamma: float) -> np.ndarray:
    q_next = target_net.forward(batch.next_states).max(axis=1)
    return batch.rewards + gamma * (1.0 - batch.dones.astype(np.float64)) * q_next


class DqnLearner:
    def __init__(self, obs_dim: int, n_actions: int, hidden=(64, 64), activation="relu", lr=1e-3,
                 gamma=0.99, batch_size=64, sync_interval=500, rng: RngStream | None = None):
        if not 0.0 <= gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
        self.q_net = Mlp([obs_dim, *hidden, n_actions], activation, rng)
        self.target_net = self.q_net.copy()
        self.gamma = float(gamma)
        self.batch_size = int(batch_size)
        self.sync_interval = int(sync_interval)
        self.opt = AdamState()
        # pull-based learning rate: a constant or a zero-argument callable
        self.lr: float | Callable[[], float] = lr
        self.updates = 0

    def current_lr(self) -> float:
        return float(self.lr()) if callable(self.lr) else float(self.lr)

    def act(self, obs) -> int:
        return greedy_action(self.q_net, obs)

    def act_batch(self, obs) -> np.ndarray:
        return np.argmax(self.q_net.forward(obs), axis=1)

    def update(self, batch: Batch) -> float:
        """One Adam step on the squared TD error of ``batch``."""
        y = dqn_targets(batch, self.target_net, self.gamma)
        q, cache = self.q_net.forward(batch.states, keep=True)
        n = len(batch)
        rows = np.arange(n)
        td = q[rows, batch.actions] - y
        loss = float(np.mean(td * td))
        grad_out = np.zeros_like(q)
        grad_out[rows, batch.actions] = 2.0 * td / n
        grads = self.q_net.backprop(batch.states, grad_out, cache)
        adam_step(self.q_net.params(), grads, self.opt, self.current_lr())
        self.updates += 1
        if self.updates % self.sync_interval == 0:
            self.target_net.copy_from(self.q_net)
        return loss


def dqn_train_step(learner: DqnLearner, buffer: ReplayBuffer, rng: RngStream) -> float:
    return learner.update(buffer.sample(learner.batch_size, rng))
