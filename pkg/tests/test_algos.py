import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbrlkit.algos.dqn import DqnLearner, dqn_targets, dqn_train_step, greedy_action
from mbrlkit.algos.ilqr import (
    IlqrSolver,
    QuadraticCost,
    ilqr_backward_pass,
    ilqr_derivatives,
    ilqr_forward_pass,
    ilqr_solve,
    trajectory_cost,
)
from mbrlkit.algos.mpc import MpcPlanner, mpc_plan
from mbrlkit.core import Batch, Box, Discrete, ReplayBuffer, Transition, rng_fork
from mbrlkit.dynamics import DynamicsModel, LinearDynamics
from mbrlkit.envs import PendulumEnv
from mbrlkit.errors import ConvergenceError, EmptySourceError
from mbrlkit.fapprox import Mlp
from mbrlkit.flow import IlqrPolicy

from oracles import (
    ToyDiscreteModel,
    enumerate_best_first_action,
    random_lq,
    riccati_controls,
    riccati_fixed_point_gain,
)


def fixed_q_net(values):
    """A net whose output ignores the input and equals ``values``."""
    values = np.asarray(values, dtype=float)
    return Mlp.from_params([np.zeros((len(values), 1))], [values])


# --------------------------------------------------------------------- DQN


@pytest.mark.parametrize("q, expected", [([1.0, 3.0, 2.0], 1), ([2.0, 2.0], 0), ([-5.0], 0)])
def test_greedy_action(q, expected):
    assert greedy_action(fixed_q_net(q), np.zeros(1)) == expected


@settings(max_examples=50, deadline=None)
@given(q=st.lists(st.floats(-100, 100), min_size=1, max_size=6), shift=st.floats(-50, 50))
def test_greedy_action_shift_invariant(q, shift):
    q = np.round(np.asarray(q), 3)  # keep ties exact after the shift
    shifted = np.round(q + np.round(shift, 3), 3)
    assert np.argmax(shifted) == np.argmax(q) or shifted[np.argmax(shifted)] == shifted[np.argmax(q)]
    assert greedy_action(fixed_q_net(q), np.zeros(1)) == int(np.argmax(q))


def one_row(reward, done, n=1):
    return Batch(np.zeros((n, 1)), np.zeros(n, dtype=np.int64), np.full(n, reward), np.zeros((n, 1)),
                 np.full(n, done))


def test_dqn_targets_examples():
    net = fixed_q_net([2.0, -1.0])
    assert dqn_targets(one_row(1.0, False), net, 0.9)[0] == pytest.approx(2.8)
    assert dqn_targets(one_row(1.0, True), net, 0.9)[0] == 1.0
    b = one_row(0.5, False, 5)
    np.testing.assert_array_equal(dqn_targets(b, net, 0.0), b.rewards)


@pytest.mark.parametrize("seed", range(5))
def test_dqn_targets_match_scalar_loop(seed):
    rng = rng_fork(seed, 0)
    net = Mlp([3, 8, 4], "relu", rng)
    n = 32
    b = Batch(rng.normal(size=(n, 3)), rng.integers(0, 4, n), rng.normal(size=n), rng.normal(size=(n, 3)),
              rng.uniform(size=n) < 0.3)
    y = dqn_targets(b, net, 0.95)
    for i in range(n):
        q = net.forward(b.next_states[i])
        best = max(float(v) for v in q)
        ref = b.rewards[i] + (0.0 if b.dones[i] else 0.95 * best)
        assert abs(y[i] - ref) < 1e-12


def _learner(seed, **kw):
    return DqnLearner(2, 3, (16,), "relu", batch_size=8, rng=rng_fork(seed, 4), **kw)


def test_dqn_fixed_point_fit():
    learner = _learner(0, sync_interval=10**9, gamma=0.5, lr=1e-2)
    buf = ReplayBuffer(10)
    buf.push(Transition(np.array([0.5, -0.5]), 1, 1.0, np.array([0.1, 0.2]), False))
    rng = rng_fork(0, 3)
    losses = [dqn_train_step(learner, buf, rng) for _ in range(500)]
    assert losses[-1] < 1e-3


def test_sync_interval_one_copies_every_step():
    learner = _learner(1, sync_interval=1)
    buf = ReplayBuffer(10)
    for i in range(5):
        buf.push(Transition(np.array([i, 1.0]), i % 3, 1.0, np.array([i + 1.0, 0.0]), i == 4))
    rng = rng_fork(1, 3)
    for _ in range(5):
        dqn_train_step(learner, buf, rng)
        for a, b in zip(learner.q_net.params(), learner.target_net.params()):
            np.testing.assert_array_equal(a, b)


def test_dqn_training_deterministic():
    def run():
        learner = _learner(2)
        buf = ReplayBuffer(50)
        data_rng = rng_fork(2, 1)
        for _ in range(50):
            buf.push(Transition(data_rng.normal(size=2), int(data_rng.integers(0, 3)), float(data_rng.normal()),
                                data_rng.normal(size=2), bool(data_rng.uniform() < 0.1)))
        rng = rng_fork(2, 3)
        return [dqn_train_step(learner, buf, rng) for _ in range(30)]

    assert run() == run()


def test_dqn_empty_buffer():
    with pytest.raises(EmptySourceError):
        dqn_train_step(_learner(0), ReplayBuffer(4), rng_fork(0, 3))


def test_dqn_rejects_bad_gamma():
    with pytest.raises(ValueError):
        DqnLearner(2, 2, gamma=1.0)


# --------------------------------------------------------------------- MPC


class ToyAdapter(DynamicsModel):
    """Wraps the oracle toy model in the DynamicsModel interface."""

    def __init__(self, toy):
        self.toy = toy
        self.obs_dim = toy.obs_dim
        self.action_space = toy.action_space

    def predict_batch(self, states, actions):
        return np.tanh(states @ self.toy.W.T + self.toy.V[np.asarray(actions, dtype=np.int64)])


def toy_cost(toy):
    def cost(s, a, s_next):
        return np.sum((s_next - toy.goal) ** 2, axis=-1) + toy.action_cost[a]

    return cost


def enumerating_sampler(n_actions, horizon, shuffle_seed):
    seqs = np.array(list(itertools.product(range(n_actions), repeat=horizon)), dtype=np.int64)
    seqs = seqs[rng_fork(shuffle_seed, 0).permutation(len(seqs))]

    def sampler(space, n, h, rng):
        return seqs

    return sampler


def test_mpc_degenerate_sampler_picks_argmin():
    model = LinearDynamics([[1.0]], [[1.0]])
    cands = np.array([[[-1.0]], [[0.0]], [[1.0]]])
    planner = MpcPlanner(model, lambda s, a, s2: s2[..., 0] ** 2, Box([-1.0], [1.0]), 1, 3,
                         sampler=lambda space, n, h, rng: cands)
    np.testing.assert_array_equal(mpc_plan(planner, [1.0], rng_fork(0, 6)), [-1.0])


def test_mpc_single_candidate_returns_its_first_action():
    model = LinearDynamics([[1.0]], [[1.0]])
    space = Box([-1.0], [1.0])
    planner = MpcPlanner(model, lambda s, a, s2: s2[..., 0] ** 2, space, 4, 1)
    expected = space.sample(rng_fork(3, 6), (1, 4))[0, 0]
    np.testing.assert_array_equal(mpc_plan(planner, [1.0], rng_fork(3, 6)), expected)


def test_mpc_ties_go_to_lowest_index():
    model = LinearDynamics([[1.0]], [[0.0]])
    cands = np.array([[[0.3]], [[-0.7]], [[0.1]]])
    planner = MpcPlanner(model, lambda s, a, s2: np.zeros(s.shape[:-1]), Box([-1.0], [1.0]), 1, 3,
                         sampler=lambda space, n, h, rng: cands)
    np.testing.assert_array_equal(planner.plan([0.0], rng_fork(0, 6)), [0.3])


def test_mpc_toy_matches_enumeration_three_actions():
    toy = ToyDiscreteModel(rng_fork(0, 9), 2, 3)
    planner = MpcPlanner(ToyAdapter(toy), toy_cost(toy), toy.action_space, 3, 27, enumerating_sampler(3, 3, 0))
    s0 = np.array([0.2, -0.4])
    a_ref, _ = enumerate_best_first_action(toy.step, toy.cost, s0, 3, 3)
    assert mpc_plan(planner, s0, rng_fork(0, 6)) == a_ref


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n_actions=st.integers(2, 4), horizon=st.integers(1, 3))
def test_mpc_matches_enumeration_property(seed, n_actions, horizon):
    rng = rng_fork(seed, 9)
    toy = ToyDiscreteModel(rng, 3, n_actions)
    s0 = rng.normal(size=3)
    planner = MpcPlanner(ToyAdapter(toy), toy_cost(toy), toy.action_space, horizon, n_actions**horizon,
                         enumerating_sampler(n_actions, horizon, seed))
    a_ref, c_ref = enumerate_best_first_action(toy.step, toy.cost, s0, n_actions, horizon)
    a = mpc_plan(planner, s0, rng_fork(seed, 6))
    # a different first action is fine only when it reaches the same optimum
    seqs = planner.sampler(None, 0, 0, None)
    costs = planner.score(s0, seqs)
    assert a == a_ref or abs(costs.min() - c_ref) < 1e-12


def test_mpc_deterministic_given_rng():
    env = PendulumEnv(obs_mode="raw")
    planner = MpcPlanner(env.true_model(), lambda s, a, s2: -env.reward_batch(s, a, s2), env.spec.action_space, 10, 200)
    a = mpc_plan(planner, [0.3, 0.0], rng_fork(5, 6))
    b = mpc_plan(planner, [0.3, 0.0], rng_fork(5, 6))
    np.testing.assert_array_equal(a, b)


def test_mpc_rejects_bad_sizes():
    with pytest.raises(ValueError):
        MpcPlanner(LinearDynamics([[1.0]], [[1.0]]), None, Box([-1.0], [1.0]), 0, 5)


# -------------------------------------------------------------------- iLQR


def scalar_problem():
    return LinearDynamics([[1.0]], [[1.0]]), QuadraticCost([[1.0]], [[1.0]])


def test_derivatives_of_linear_model_and_quadratic_cost():
    rng = rng_fork(0, 0)
    A, B = rng.normal(size=(3, 3)), rng.normal(size=(3, 2))
    Q, R = np.diag([1.0, 2.0, 3.0]), np.diag([0.5, 0.25])
    X, U = rng.normal(size=(6, 3)), rng.normal(size=(5, 2))
    d = ilqr_derivatives(LinearDynamics(A, B), QuadraticCost(Q, R), X, U)
    for t in range(5):
        np.testing.assert_array_equal(d.f_x[t], A)
        np.testing.assert_array_equal(d.f_u[t], B)
        np.testing.assert_array_equal(d.c_xx[t], 2 * Q)
        np.testing.assert_array_equal(d.c_uu[t], 2 * R)
        np.testing.assert_array_equal(d.c_ux[t], 0.0)


def test_pendulum_jacobian_against_hand_derivation():
    env = PendulumEnv(obs_mode="raw")
    g, m, l, dt = env.g, env.m, env.l, env.dt
    a, b = 3 * g / (2 * l), 3 / (m * l * l)
    th = np.pi / 2
    # v' = v + (a sin th + b u) dt, th' = th + v' dt
    fx_hand = np.array([[1 + a * np.cos(th) * dt * dt, dt], [a * np.cos(th) * dt, 1.0]])
    fu_hand = np.array([[b * dt * dt], [b * dt]])
    d = ilqr_derivatives(env.true_model(), QuadraticCost(np.eye(2), [[1.0]]), np.array([[th, 0.0], [th, 0.0]]),
                         np.zeros((1, 1)))
    assert np.max(np.abs(d.f_x[0] - fx_hand)) < 1e-6
    assert np.max(np.abs(d.f_u[0] - fu_hand)) < 1e-6


def test_fd_cost_expansion_matches_analytic():
    cost = QuadraticCost(np.diag([1.0, 0.3]), [[0.2]])

    class Opaque:  # hides ``expand`` so the finite-difference path runs
        stage = staticmethod(cost.stage)
        terminal = staticmethod(cost.terminal)

    rng = rng_fork(1, 0)
    X, U = rng.normal(size=(4, 2)), rng.normal(size=(3, 1))
    model = LinearDynamics(np.eye(2), [[0.0], [1.0]])
    a = ilqr_derivatives(model, cost, X, U)
    b = ilqr_derivatives(model, Opaque(), X, U)
    for name in ("c_x", "c_u", "c_xx", "c_uu", "c_ux", "cT_x", "cT_xx"):
        np.testing.assert_allclose(getattr(b, name), getattr(a, name), atol=1e-4)


def test_backward_pass_scalar():
    model, cost = scalar_problem()
    d = ilqr_derivatives(model, cost, np.array([[1.0], [1.0]]), np.zeros((1, 1)))
    g = ilqr_backward_pass(d, 0.0)
    assert g.k[0, 0] == pytest.approx(-0.5, abs=1e-12)
    assert g.K[0, 0, 0] == pytest.approx(-0.5, abs=1e-12)


@pytest.mark.parametrize("problem", ["scalar", "double_integrator"])
def test_backward_pass_huge_mu_freezes_controller(problem):
    # k is about -Q_u / mu, so the instances keep Q_u of order one
    if problem == "scalar":
        model, cost = scalar_problem()
        x0, T = np.array([1.0]), 1
    else:
        model = LinearDynamics([[1.0, 0.1], [0.0, 1.0]], [[0.005], [0.1]])
        cost = QuadraticCost(np.eye(2), [[0.1]])
        x0, T = np.array([1.0, 0.0]), 30
    U = np.zeros((T, 1))
    X = np.empty((T + 1, len(x0)))
    X[0] = x0
    for t in range(T):
        X[t + 1] = model.predict(X[t], U[t])
    g = ilqr_backward_pass(ilqr_derivatives(model, cost, X, U), 1e10)
    assert np.max(np.abs(g.k)) < 1e-8 and np.max(np.abs(g.K)) < 1e-8


def test_backward_pass_gain_matches_riccati_fixed_point():
    # strongly stable so the finite-horizon gain settles well inside T
    A = np.array([[0.9, 0.2], [0.0, 0.8]])
    B = np.array([[0.0], [1.0]])
    Q, R = np.eye(2), np.array([[0.1]])
    model, cost = LinearDynamics(A, B), QuadraticCost(Q, R)
    T = 50
    d = ilqr_derivatives(model, cost, np.zeros((T + 1, 2)), np.zeros((T, 1)))
    K_inf = riccati_fixed_point_gain(A, B, Q, R)
    # the feedback law is u = K x, the Riccati law is u = -K_inf x
    assert np.max(np.abs(ilqr_backward_pass(d, 0.0).K[0] + K_inf)) < 1e-6


def test_backward_pass_signals_indefinite():
    model = LinearDynamics([[1.0]], [[1.0]])
    cost = QuadraticCost([[1.0]], [[-5.0]])
    d = ilqr_derivatives(model, cost, np.zeros((2, 1)), np.zeros((1, 1)))
    assert ilqr_backward_pass(d, 0.0) is None


def test_forward_pass_identity_at_zero_step():
    model, cost = scalar_problem()
    X, U = np.array([[1.0], [1.0]]), np.zeros((1, 1))
    g = ilqr_backward_pass(ilqr_derivatives(model, cost, X, U), 0.0)
    g.K[:] = 0.0
    Xn, Un, J = ilqr_forward_pass(model, cost, X, U, g, 0.0)
    np.testing.assert_array_equal(Xn, X)
    np.testing.assert_array_equal(Un, U)
    assert J == trajectory_cost(cost, X, U) == 2.0


def test_forward_pass_scalar_step():
    model, cost = scalar_problem()
    X, U = np.array([[1.0], [1.0]]), np.zeros((1, 1))
    g = ilqr_backward_pass(ilqr_derivatives(model, cost, X, U), 0.0)
    Xn, Un, J = ilqr_forward_pass(model, cost, X, U, g, 1.0)
    assert Un[0, 0] == pytest.approx(-0.5, abs=1e-12)
    assert J == pytest.approx(1.5, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_forward_pass_cost_is_consistent(seed):
    rng = rng_fork(seed, 0)
    A, B, Q, R, x0, T = random_lq(rng)
    model, cost = LinearDynamics(A, B), QuadraticCost(Q, R)
    U = rng.normal(size=(T, B.shape[1]))
    X = np.empty((T + 1, len(x0)))
    X[0] = x0
    for t in range(T):
        X[t + 1] = model.predict(X[t], U[t])
    g = ilqr_backward_pass(ilqr_derivatives(model, cost, X, U), 1e-3)
    Xn, Un, J = ilqr_forward_pass(model, cost, X, U, g, 0.5)
    ref = sum(Xn[t] @ Q @ Xn[t] + Un[t] @ R @ Un[t] for t in range(T)) + Xn[T] @ Q @ Xn[T]
    assert abs(J - ref) < 1e-12 * max(1.0, abs(ref))


def test_solve_origin_is_fixed_point():
    A = np.array([[1.0, 0.1], [0.0, 1.0]])
    model = LinearDynamics(A, [[0.005], [0.1]], [0.0, 0.0])
    res = ilqr_solve(IlqrSolver(20), model, QuadraticCost(np.eye(2), [[0.1]]), np.zeros(2), np.zeros((20, 1)))
    np.testing.assert_array_equal(res.U, 0.0)
    assert res.cost_trace[-1] == 0.0


def test_solve_scalar():
    model, cost = scalar_problem()
    res = ilqr_solve(IlqrSolver(1), model, cost, [1.0], np.zeros((1, 1)))
    assert abs(res.U[0, 0] + 0.5) < 1e-9
    assert res.cost_trace[0] == 2.0 and res.cost_trace[-1] == pytest.approx(1.5)
    assert res.converged and res.accepted == 1


def test_solve_double_integrator_matches_riccati():
    A = np.array([[1.0, 0.1], [0.0, 1.0]])
    B = np.array([[0.005], [0.1]])
    Q, R = np.eye(2), np.array([[0.1]])
    res = ilqr_solve(IlqrSolver(30), LinearDynamics(A, B), QuadraticCost(Q, R), [1.0, 0.0], np.zeros((30, 1)))
    U_ref, _ = riccati_controls(A, B, Q, R, Q, np.array([1.0, 0.0]), 30)
    assert np.max(np.abs(res.U - U_ref)) < 1e-6


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_solve_lq_two_accepted_steps(seed):
    rng = rng_fork(seed, 0)
    A, B, Q, R, x0, T = random_lq(rng, n_max=3, m_max=3)
    res = ilqr_solve(IlqrSolver(T), LinearDynamics(A, B), QuadraticCost(Q, R), x0, np.zeros((T, B.shape[1])))
    U_ref, _ = riccati_controls(A, B, Q, R, Q, x0, T)
    scale = max(1.0, np.max(np.abs(U_ref)))
    assert res.accepted <= 2
    assert np.max(np.abs(res.U - U_ref)) < 1e-6 * scale
    assert all(b <= a for a, b in zip(res.cost_trace, res.cost_trace[1:]))


def test_solve_respects_control_bounds():
    model, cost = scalar_problem()
    solver = IlqrSolver(5, u_lower=np.array([-0.2]), u_upper=np.array([0.2]))
    res = ilqr_solve(solver, model, cost, [3.0], np.zeros((5, 1)))
    assert np.all(np.abs(res.U) <= 0.2 + 1e-15)
    # pushing as hard as allowed towards the origin is optimal from this far out
    assert res.U[0, 0] == pytest.approx(-0.2)


def test_solve_pendulum_balances_from_small_angle():
    env = PendulumEnv(obs_mode="raw")
    space = env.spec.action_space
    solver = IlqrSolver(30, u_lower=space.lower, u_upper=space.upper)
    cost = QuadraticCost(np.diag([1.0, 0.1]), [[0.001]])
    policy = IlqrPolicy(solver, env.true_model(), cost, 1)
    U0 = policy.initial_controls(np.array([0.3, 0.0]))
    res = ilqr_solve(solver, env.true_model(), cost, [0.3, 0.0], U0)
    assert res.cost_trace[-1] <= res.cost_trace[0]
    assert np.max(np.abs(res.X[:, 0])) < 0.35 and abs(res.X[-1, 0]) < 0.05


def test_convergence_error_carries_best_trajectory():
    model = LinearDynamics([[1.0]], [[1.0]])
    cost = QuadraticCost([[1.0]], [[-5.0]])  # no positive-definite Q_uu exists
    with pytest.raises(ConvergenceError) as info:
        ilqr_solve(IlqrSolver(1, mu_max=1.0), model, cost, [1.0], np.zeros((1, 1)))
    assert info.value.best is not None
    np.testing.assert_array_equal(info.value.best.U, [[0.0]])
