"""Random-shooting model predictive control."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..core import Discrete, RngStream, Space
from ..dynamics import DynamicsModel


def uniform_sampler(space: Space, n: int, horizon: int, rng: RngStream) -> np.ndarray:
    """``n`` action sequences of length ``horizon`` drawn uniformly from ``space``."""
    if isinstance(space, Discrete):
        return rng.integers(0, space.n, size=(n, horizon))
    return rng.uniform(space.lower, space.upper, size=(n, horizon, space.dim))


class MpcPlanner:
    """Scores ``n_candidates`` sampled sequences through ``model`` and returns
    the first action of the cheapest one.

    ``cost(states, actions, next_states)`` must broadcast over leading axes
    and return per-step costs. ``sampler(space, n, horizon, rng)`` replaces
    uniform sampling when given.
    """

    def __init__(self, model: DynamicsModel, cost: Callable, action_space: Space, horizon: int = 20,
                 n_candidates: int = 1000, sampler: Callable | None = None):
        if horizon < 1 or n_candidates < 1:
            raise ValueError("horizon and n_candidates must be >= 1")
        self.model = model
        self.cost = cost
        self.action_space = action_space
        self.horizon = int(horizon)
        self.n_candidates = int(n_candidates)
        self.sampler = sampler or uniform_sampler

    def score(self, s0, candidates) -> np.ndarray:
        s0 = np.asarray(s0, dtype=np.float64)
        states = self.model.rollout_batch(np.repeat(s0[None], len(candidates), axis=0), candidates)
        costs = self.cost(states[:, :-1], candidates, states[:, 1:]).sum(axis=1)
        return np.where(np.isnan(costs), np.inf, costs)

    def plan(self, s0, rng: RngStream):
        candidates = self.sampler(self.action_space, self.n_candidates, self.horizon, rng)
        best = int(np.argmin(self.score(s0, candidates)))
        first = candidates[best, 0]
        return int(first) if isinstance(self.action_space, Discrete) else np.array(first, dtype=np.float64)


def mpc_plan(planner: MpcPlanner, s0, rng: RngStream):
    return planner.plan(s0, rng)
