"""Algorithm roster: DQN, random-shooting MPC and iLQR."""

from .dqn import DqnLearner, dqn_targets, dqn_train_step, greedy_action
from .ilqr import (
    Derivatives,
    Gains,
    IlqrResult,
    IlqrSolver,
    QuadraticCost,
    ilqr_backward_pass,
    ilqr_derivatives,
    ilqr_forward_pass,
    ilqr_solve,
    trajectory_cost,
)
from .mpc import MpcPlanner, mpc_plan, uniform_sampler

__all__ = [
    "DqnLearner", "dqn_targets", "dqn_train_step", "greedy_action",
    "Derivatives", "Gains", "IlqrResult", "IlqrSolver", "QuadraticCost",
    "ilqr_backward_pass", "ilqr_derivatives", "ilqr_forward_pass", "ilqr_solve", "trajectory_cost",
    "MpcPlanner", "mpc_plan", "uniform_sampler",
]
