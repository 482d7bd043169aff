import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbrlkit.core import (
    Batch,
    Box,
    Discrete,
    ReplayBuffer,
    Transition,
    buffer_push,
    buffer_sample,
    rng_fork,
    sample_union,
    space_contains,
    space_sample,
)
from mbrlkit.errors import ContractError, EmptySourceError, MbrlError


def tr(i, done=False):
    return Transition(np.array([float(i), -float(i)]), i % 3, float(i), np.array([i + 1.0, 0.0]), done)


# -- spaces ---------------------------------------------------------------


def test_box_contains_interior_and_boundary():
    box = Box([-1.0], [1.0])
    assert space_contains(box, [0.0])
    assert space_contains(box, [1.0])
    assert not space_contains(box, [1.0 + 1e-12])


def test_discrete_contains_off_by_one():
    assert space_contains(Discrete(3), 2)
    assert not space_contains(Discrete(3), 3)
    assert not space_contains(Discrete(3), -1)


def test_contains_dimension_mismatch():
    with pytest.raises(ContractError):
        space_contains(Box([-1.0], [1.0]), [0.0, 0.0])


@pytest.mark.parametrize("lower,upper", [([0.0], [-1.0]), ([np.inf], [np.inf]), ([0.0, 1.0], [1.0])])
def test_box_rejects_bad_bounds(lower, upper):
    with pytest.raises(ContractError):
        Box(lower, upper)


def test_discrete_needs_one_action():
    with pytest.raises(ContractError):
        Discrete(0)


def test_sample_degenerate_spaces():
    rng = rng_fork(0, 0)
    assert all(space_sample(Discrete(1), rng) == 0 for _ in range(50))
    np.testing.assert_array_equal(space_sample(Box([2.0], [2.0]), rng), [2.0])


def test_discrete_sample_frequencies():
    draws = Discrete(4).sample(rng_fork(7, 0), 100_000)
    freq = np.bincount(draws, minlength=4) / len(draws)
    assert np.all((freq >= 0.24) & (freq <= 0.26)), freq


@settings(max_examples=20, deadline=None)
@given(
    dims=st.integers(1, 5),
    seed=st.integers(0, 2**32 - 1),
    n=st.integers(1, 8),
)
def test_samples_always_contained(dims, seed, n):
    rng = rng_fork(seed, 0)
    lo = rng.uniform(-5, 5, size=dims)
    hi = lo + rng.uniform(0, 3, size=dims)
    box, disc = Box(lo, hi), Discrete(n)
    pts = box.sample(rng, 10_000)
    assert all(box.contains(p) for p in pts)
    idx = disc.sample(rng, 10_000)
    assert all(disc.contains(int(i)) for i in idx)


# -- rng ------------------------------------------------------------------


def test_rng_fork_determinism_and_separation():
    a = rng_fork(42, 0).random(10)
    np.testing.assert_array_equal(a, rng_fork(42, 0).random(10))
    assert np.any(a != rng_fork(42, 1).random(10))
    assert np.any(a != rng_fork(43, 0).random(10))


# -- buffer ---------------------------------------------------------------


def test_buffer_fifo_eviction():
    buf = ReplayBuffer(2)
    for i in (1, 2, 3):
        buffer_push(buf, tr(i))
    np.testing.assert_array_equal(buf.all().rewards, [2.0, 3.0])


def test_buffer_size_and_no_premature_eviction():
    buf = ReplayBuffer(5)
    buf.push(tr(1))
    assert len(buf) == 1
    buf = ReplayBuffer(3)
    for i in (1, 2, 3):
        buf.push(tr(i))
    np.testing.assert_array_equal(buf.all().rewards, [1.0, 2.0, 3.0])


def test_buffer_zero_capacity_rejected_at_construction():
    with pytest.raises(MbrlError):
        ReplayBuffer(0)


def test_buffer_sample_single_element():
    buf = ReplayBuffer(4)
    buf.push(tr(1))
    b = buffer_sample(buf, 3, rng_fork(0, 3))
    np.testing.assert_array_equal(b.rewards, [1.0, 1.0, 1.0])


def test_buffer_sample_deterministic():
    buf = ReplayBuffer(10)
    for i in range(10):
        buf.push(tr(i))
    a = buf.sample(20, rng_fork(5, 3))
    b = buf.sample(20, rng_fork(5, 3))
    np.testing.assert_array_equal(a.rewards, b.rewards)


def test_buffer_sample_uniform_with_replacement():
    buf = ReplayBuffer(2)
    buf.push(tr(0))
    buf.push(tr(1))
    r = buf.sample(10_000, rng_fork(1, 3)).rewards
    assert 0.48 <= np.mean(r == 0.0) <= 0.52


def test_empty_buffer_sample_raises():
    with pytest.raises(EmptySourceError):
        ReplayBuffer(3).sample(1, rng_fork(0, 0))
    with pytest.raises(EmptySourceError):
        sample_union([ReplayBuffer(3)], 1, rng_fork(0, 0))


@settings(max_examples=25, deadline=None)
@given(capacity=st.integers(1, 20), ops=st.lists(st.integers(0, 1000), min_size=1000, max_size=1200))
def test_buffer_matches_list_model(capacity, ops):
    buf = ReplayBuffer(capacity)
    model = []
    for k, v in enumerate(ops):
        buf.push(tr(v, done=bool(k % 2)))
        model.append(float(v))
        model = model[-capacity:]
        assert len(buf) == len(model)
    np.testing.assert_array_equal(buf.all().rewards, model)


def test_sample_union_covers_both_buffers():
    a, b = ReplayBuffer(5), ReplayBuffer(5)
    a.push(tr(0))
    b.push(tr(1))
    r = sample_union([a, b], 4000, rng_fork(0, 3)).rewards
    assert 0.45 < np.mean(r == 1.0) < 0.55


def test_batch_columns_must_match():
    with pytest.raises(ContractError):
        Batch(np.zeros((2, 1)), np.zeros(2), np.zeros(3), np.zeros((2, 1)), np.zeros(2, dtype=bool))


def test_batch_roundtrip_and_concat():
    ts = [tr(i) for i in range(4)]
    b = Batch.from_transitions(ts)
    assert len(b) == 4 and b[2].reward == 2.0 and b[2].action == 2
    c = Batch.concat([b, Batch.from_transitions(ts[:1])])
    assert len(c) == 5
