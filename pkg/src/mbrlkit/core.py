"""Spaces, transitions, replay storage and seeded random streams."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ContractError, EmptySourceError, MbrlError

# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------


class RngStream:
    """Deterministic random stream identified by ``(root_seed, stream_id)``.

    State layout: a Philox4x64-10 counter-based generator. The 128-bit key is
    ``SeedSequence(root_seed, spawn_key=(stream_id,)).generate_state(2, uint64)``
    and the 256-bit counter starts at zero. Draws advance the counter only,
    so two streams with the same pair replay the same sequence and streams
    with different ``stream_id`` never share state.
    """

    def __init__(self, root_seed: int, stream_id: int = 0):
        self.root_seed = int(root_seed)
        self.stream_id = int(stream_id)
        seq = np.random.SeedSequence(self.root_seed, spawn_key=(self.stream_id,))
        key = seq.generate_state(2, np.uint64)
        self.generator = np.random.Generator(np.random.Philox(key=key))

    def __repr__(self) -> str:
        return f"RngStream(root_seed={self.root_seed}, stream_id={self.stream_id})"

    def fork(self, stream_id: int) -> "RngStream":
        """A fresh stream from the same root seed."""
        return RngStream(self.root_seed, stream_id)

    # thin delegation to the numpy generator
    def random(self, size=None):
        return self.generator.random(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def permutation(self, n):
        return self.generator.permutation(n)


def rng_fork(root_seed: int, stream_id: int) -> RngStream:
    return RngStream(root_seed, stream_id)


# ---------------------------------------------------------------------------
# Spaces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=np.float64))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=np.float64))
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise ContractError(f"Box bounds must be equal-length vectors, got {lo.shape} and {hi.shape}")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ContractError("Box bounds must be finite")
        if np.any(lo > hi):
            raise ContractError("Box requires lower <= upper elementwise")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def shape(self) -> tuple:
        return (self.dim,)

    def contains(self, point) -> bool:
        p = np.asarray(point, dtype=np.float64)
        if p.shape != (self.dim,):
            raise ContractError(f"point has shape {p.shape}, space expects ({self.dim},)")
        return bool(np.all(p >= self.lower) and np.all(p <= self.upper))

    def sample(self, rng: RngStream, size: int | tuple | None = None) -> np.ndarray:
        shape = self.shape if size is None else tuple(np.atleast_1d(size)) + self.shape
        return rng.uniform(self.lower, self.upper, size=shape)

    def clip(self, point) -> np.ndarray:
        return np.clip(point, self.lower, self.upper)

    def __eq__(self, other):
        return (
            isinstance(other, Box)
            and np.array_equal(self.lower, other.lower)
            and np.array_equal(self.upper, other.upper)
        )

    def __hash__(self):
        return hash((self.lower.tobytes(), self.upper.tobytes()))


@dataclass(frozen=True)
class Discrete:
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ContractError(f"Discrete space needs n >= 1, got {self.n}")

    @property
    def shape(self) -> tuple:
        return ()

    def contains(self, point) -> bool:
        p = np.asarray(point)
        if p.ndim != 0:
            raise ContractError(f"Discrete space expects a scalar index, got shape {p.shape}")
        if not np.issubdtype(p.dtype, np.integer):
            if not float(p).is_integer():
                return False
        return 0 <= int(p) < self.n

    def sample(self, rng: RngStream, size: int | tuple | None = None):
        if size is None:
            return int(rng.integers(0, self.n))
        return rng.integers(0, self.n, size=size)


Space = Union[Box, Discrete]


def space_contains(space: Space, point) -> bool:
    return space.contains(point)


def space_sample(space: Space, rng: RngStream):
    return space.sample(rng)


# ---------------------------------------------------------------------------
# Experience
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray | int
    reward: float
    next_state: np.ndarray
    done: bool


@dataclass
class Batch:
    """Columnar transitions. All columns share the leading length."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    def __post_init__(self):
        n = len(self.states)
        for name in ("actions", "rewards", "next_states", "dones"):
            if len(getattr(self, name)) != n:
                raise ContractError(f"Batch column {name!r} has length {len(getattr(self, name))}, expected {n}")

    def __len__(self) -> int:
        return len(self.states)

    def __getitem__(self, i) -> Transition:
        a = self.actions[i]
        return Transition(
            self.states[i],
            int(a) if np.ndim(a) == 0 else a,
            float(self.rewards[i]),
            self.next_states[i],
            bool(self.dones[i]),
        )

    @classmethod
    def from_transitions(cls, transitions, obs_dim: int | None = None, action_shape=None) -> "Batch":
        ts = list(transitions)
        if not ts:
            od = obs_dim or 0
            ash = () if action_shape is None else tuple(action_shape)
            adt = np.int64 if ash == () else np.float64
            return cls(np.zeros((0, od)), np.zeros((0,) + ash, dtype=adt), np.zeros(0), np.zeros((0, od)), np.zeros(0, dtype=bool))
        return cls(
            np.array([t.state for t in ts], dtype=np.float64),
            np.array([t.action for t in ts]),
            np.array([t.reward for t in ts], dtype=np.float64),
            np.array([t.next_state for t in ts], dtype=np.float64),
            np.array([t.done for t in ts], dtype=bool),
        )

    @classmethod
    def concat(cls, batches) -> "Batch":
        bs = [b for b in batches if len(b)]
        if not bs:
            return batches[0]
        return cls(*(np.concatenate([getattr(b, f) for b in bs]) for f in ("states", "actions", "rewards", "next_states", "dones")))


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions, stored columnwise.

    Columns are allocated lazily on the first push, so the buffer adopts the
    observation and action shapes of whatever it is fed.
    """

    def __init__(self, capacity: int):
        if int(capacity) != capacity or capacity < 1:
            raise MbrlError(f"ReplayBuffer capacity must be a positive integer, got {capacity!r}")
        self.capacity = int(capacity)
        self.size = 0
        self.write_cursor = 0
        self._cols: dict[str, np.ndarray] | None = None

    def __len__(self) -> int:
        return self.size

    def _allocate(self, state, action):
        state = np.asarray(state, dtype=np.float64)
        action = np.asarray(action)
        act_dtype = np.int64 if np.issubdtype(action.dtype, np.integer) else np.float64
        c = self.capacity
        self._cols = {
            "states": np.zeros((c,) + state.shape),
            "actions": np.zeros((c,) + action.shape, dtype=act_dtype),
            "rewards": np.zeros(c),
            "next_states": np.zeros((c,) + state.shape),
            "dones": np.zeros(c, dtype=bool),
        }

    def push(self, t: Transition) -> None:
        if self._cols is None:
            self._allocate(t.state, t.action)
        i = self.write_cursor
        cols = self._cols
        cols["states"][i] = t.state
        cols["actions"][i] = t.action
        cols["rewards"][i] = t.reward
        cols["next_states"][i] = t.next_state
        cols["dones"][i] = t.done
        self.write_cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def push_batch(self, batch: Batch) -> None:
        for i in range(len(batch)):
            self.push(batch[i])

    def _take(self, idx) -> Batch:
        c = self._cols
        return Batch(c["states"][idx], c["actions"][idx], c["rewards"][idx], c["next_states"][idx], c["dones"][idx])

    def _ordered_indices(self) -> np.ndarray:
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.size) + self.write_cursor) % self.capacity

    def all(self) -> Batch:
        """Every stored transition, oldest first."""
        if self._cols is None:
            return Batch.from_transitions([])
        return self._take(self._ordered_indices())

    def sample(self, n: int, rng: RngStream) -> Batch:
        """``n`` transitions drawn uniformly with replacement."""
        if self.size == 0:
            raise EmptySourceError("cannot sample from an empty replay buffer")
        idx = rng.integers(0, self.size, size=n)
        return self._take(idx)


def sample_union(buffers, n: int, rng: RngStream) -> Batch:
    """Uniform draw with replacement from the union of several buffers."""
    sizes = np.array([b.size for b in buffers])
    total = int(sizes.sum())
    if total == 0:
        raise EmptySourceError("cannot sample from empty replay buffers")
    idx = rng.integers(0, total, size=n)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    parts = []
    order = []
    for k, buf in enumerate(buffers):
        mask = (idx >= offsets[k]) & (idx < offsets[k + 1])
        if mask.any():
            parts.append(buf._take(idx[mask] - offsets[k]))
            order.append(np.flatnonzero(mask))
    batch = Batch.concat(parts)
    # restore draw order so the result does not depend on buffer layout
    perm = np.argsort(np.concatenate(order), kind="stable")
    return Batch(*(getattr(batch, f)[perm] for f in ("states", "actions", "rewards", "next_states", "dones")))


def buffer_push(buffer: ReplayBuffer, t: Transition) -> ReplayBuffer:
    buffer.push(t)
    return buffer


def buffer_sample(buffer: ReplayBuffer, n: int, rng: RngStream) -> Batch:
    return buffer.sample(n, rng)
