import os
import subprocess
import sys

import numpy as np
import pytest

from mbrlkit import _accel, kernels

needs_numba = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")


@needs_numba
def test_pendulum_paths_agree():
    rng = np.random.default_rng(0)
    th0 = rng.uniform(-3, 3, 64)
    thd0 = rng.uniform(-8, 8, 64)
    acts = rng.uniform(-4, 4, (64, 30))
    args = (10.0, 1.0, 1.0, 0.05, 2.0, 8.0)
    a = kernels.pendulum_rollout_np(th0, thd0, acts, *args)
    b = kernels.pendulum_rollout_nb(th0, thd0, acts, *args)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=0, atol=1e-12)


@needs_numba
def test_cartpole_paths_agree():
    rng = np.random.default_rng(1)
    s0 = rng.uniform(-0.2, 0.2, (32, 4))
    f = np.where(rng.integers(0, 2, (32, 25)) == 1, 10.0, -10.0)
    args = (9.8, 1.0, 0.1, 0.5, 0.02)
    np.testing.assert_allclose(kernels.cartpole_rollout_np(s0, f, *args), kernels.cartpole_rollout_nb(s0, f, *args), rtol=0, atol=1e-12)


def test_wrap_angle_range():
    th = np.linspace(-20, 20, 1001)
    w = kernels.wrap_angle(th)
    assert np.all((w >= -np.pi) & (w < np.pi))
    np.testing.assert_allclose(np.sin(w), np.sin(th), atol=1e-12)


@pytest.mark.parametrize("flag,expect", [("1", "pendulum_rollout_np"), ("0", "pendulum_rollout_nb" if _accel.HAVE_NUMBA else "pendulum_rollout_np")])
def test_env_flag_selects_path(flag, expect):
    env = dict(os.environ, MBRLKIT_DISABLE_NUMBA=flag)
    out = subprocess.run(
        [sys.executable, "-c", "from mbrlkit import kernels; print(kernels.pendulum_rollout.__name__)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == expect
