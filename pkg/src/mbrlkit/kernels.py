"""Hot inner loops: batched pendulum and cart-pole integration.

Each kernel exists twice. ``*_nb`` is an explicit-loop version compiled with
numba; ``*_np`` is a vectorised numpy version. The unsuffixed names point at
one or the other depending on :data:`mbrlkit._accel.USE_NUMBA`.

Angles are kept unwrapped here; observation layers wrap them.
"""

from __future__ import annotations

import math

import numpy as np

from ._accel import USE_NUMBA, njit


def wrap_angle(theta):
    """Map angles into [-pi, pi)."""
    return (theta + np.pi) % (2.0 * np.pi) - np.pi


# ---------------------------------------------------------------------------
# Pendulum: thdd = 3g/(2l) sin(th) + 3u/(m l^2), semi-implicit Euler
# ---------------------------------------------------------------------------


def pendulum_rollout_np(theta0, thetadot0, actions, g, m, l, dt, max_torque, max_speed):
    n, horizon = actions.shape
    th = np.empty((n, horizon + 1))
    thd = np.empty((n, horizon + 1))
    th[:, 0] = theta0
    thd[:, 0] = thetadot0
    u = np.clip(actions, -max_torque, max_torque)
    a = 3.0 * g / (2.0 * l)
    b = 3.0 / (m * l * l)
    for t in range(horizon):
        v = thd[:, t] + (a * np.sin(th[:, t]) + b * u[:, t]) * dt
        v = np.clip(v, -max_speed, max_speed)
        thd[:, t + 1] = v
        th[:, t + 1] = th[:, t] + v * dt
    return th, thd


@njit
def pendulum_rollout_nb(theta0, thetadot0, actions, g, m, l, dt, max_torque, max_speed):
    n, horizon = actions.shape
    th = np.empty((n, horizon + 1))
    thd = np.empty((n, horizon + 1))
    a = 3.0 * g / (2.0 * l)
    b = 3.0 / (m * l * l)
    for i in range(n):
        x = theta0[i]
        v = thetadot0[i]
        th[i, 0] = x
        thd[i, 0] = v
        for t in range(horizon):
            u = min(max(actions[i, t], -max_torque), max_torque)
            v = v + (a * math.sin(x) + b * u) * dt
            v = min(max(v, -max_speed), max_speed)
            x = x + v * dt
            th[i, t + 1] = x
            thd[i, t + 1] = v
    return th, thd


# ---------------------------------------------------------------------------
# Cart-pole: explicit Euler with the derivatives of the old state
# ---------------------------------------------------------------------------


def cartpole_rollout_np(states0, forces, g, mc, mp, lp, dt):
    n, horizon = forces.shape
    out = np.empty((n, horizon + 1, 4))
    out[:, 0] = states0
    total = mc + mp
    for t in range(horizon):
        x, xd, th, thd = out[:, t, 0], out[:, t, 1], out[:, t, 2], out[:, t, 3]
        s, c = np.sin(th), np.cos(th)
        temp = (forces[:, t] + mp * lp * thd * thd * s) / total
        thacc = (g * s - c * temp) / (lp * (4.0 / 3.0 - mp * c * c / total))
        xacc = temp - mp * lp * thacc * c / total
        out[:, t + 1, 0] = x + dt * xd
        out[:, t + 1, 1] = xd + dt * xacc
        out[:, t + 1, 2] = th + dt * thd
        out[:, t + 1, 3] = thd + dt * thacc
    return out


@njit
def cartpole_rollout_nb(states0, forces, g, mc, mp, lp, dt):
    n, horizon = forces.shape
    out = np.empty((n, horizon + 1, 4))
    total = mc + mp
    for i in range(n):
        x = states0[i, 0]
        xd = states0[i, 1]
        th = states0[i, 2]
        thd = states0[i, 3]
        out[i, 0, 0] = x
        out[i, 0, 1] = xd
        out[i, 0, 2] = th
        out[i, 0, 3] = thd
        for t in range(horizon):
            s = math.sin(th)
            c = math.cos(th)
            temp = (forces[i, t] + mp * lp * thd * thd * s) / total
            thacc = (g * s - c * temp) / (lp * (4.0 / 3.0 - mp * c * c / total))
            xacc = temp - mp * lp * thacc * c / total
            x, xd, th, thd = x + dt * xd, xd + dt * xacc, th + dt * thd, thd + dt * thacc
            out[i, t + 1, 0] = x
            out[i, t + 1, 1] = xd
            out[i, t + 1, 2] = th
            out[i, t + 1, 3] = thd
    return out


if USE_NUMBA:
    pendulum_rollout = pendulum_rollout_nb
    cartpole_rollout = cartpole_rollout_nb
else:
    pendulum_rollout = pendulum_rollout_np
    cartpole_rollout = cartpole_rollout_np
