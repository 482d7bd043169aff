"""Compare the numba and numpy implementations of the integration kernels.

    python benchmarks/bench_kernels.py [--repeats 20] [--end-to-end]

Kernel timings call both implementations directly on identical inputs and
check that they agree. ``--end-to-end`` additionally times 50 MPC planning
steps on the pendulum in two subprocesses, one with MBRLKIT_DISABLE_NUMBA set.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from mbrlkit import kernels
from mbrlkit.core import RngStream
from mbrlkit.envs import CartPoleEnv, PendulumEnv

E2E_SNIPPET = """
import time
from mbrlkit.algos.mpc import MpcPlanner
from mbrlkit.core import RngStream
from mbrlkit.envs import PendulumEnv
env = PendulumEnv(obs_mode="raw")
planner = MpcPlanner(env.true_model(), lambda s, a, s2: -env.reward_batch(s, a, s2), env.spec.action_space, 20, 1000)
rng = RngStream(0, 6)
obs = env.reset(RngStream(0, 1))
planner.plan(obs, rng)  # warm-up (compilation or cache load)
t0 = time.perf_counter()
for _ in range(50):
    obs, _, _ = env.step(planner.plan(obs, rng))
print(time.perf_counter() - t0)
"""


def workloads():
    rng = RngStream(0, 0)
    pend = PendulumEnv()
    cart = CartPoleEnv()
    out = []
    for n, h in ((1, 1), (1000, 20), (10000, 20)):
        th0 = rng.uniform(-np.pi, np.pi, n)
        thd0 = rng.uniform(-1, 1, n)
        acts = np.ascontiguousarray(rng.uniform(-2, 2, (n, h)))
        args = (th0, thd0, acts, *pend.params)
        out.append((f"pendulum {n}x{h}", kernels.pendulum_rollout_nb, kernels.pendulum_rollout_np, args))
    for n, h in ((1, 1), (1000, 20)):
        s0 = rng.uniform(-0.05, 0.05, (n, 4))
        forces = np.where(rng.random((n, h)) < 0.5, -10.0, 10.0)
        args = (s0, forces, *cart.params)
        out.append((f"cartpole {n}x{h}", kernels.cartpole_rollout_nb, kernels.cartpole_rollout_np, args))
    return out


def best_of(fn, args, repeats):
    number = max(1, int(0.05 / max(1e-7, timeit.timeit(lambda: fn(*args), number=1))))
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeats)) / number


def end_to_end():
    times = {}
    for label, flag in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, MBRLKIT_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", E2E_SNIPPET], env=env, capture_output=True, text=True, check=True)
        times[label] = float(res.stdout.strip().splitlines()[-1])
    return times


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--end-to-end", action="store_true")
    args = p.parse_args(argv)

    print(f"{'kernel':<22}{'numba':>12}{'numpy':>12}{'speedup':>10}  agree")
    for name, nb, npy, kargs in workloads():
        a, b = nb(*kargs), npy(*kargs)  # also triggers compilation outside the timed region
        same = all(np.allclose(x, y, rtol=0, atol=1e-12) for x, y in zip(np.atleast_1d(a), np.atleast_1d(b)))
        t_nb = best_of(nb, kargs, args.repeats)
        t_np = best_of(npy, kargs, args.repeats)
        print(f"{name:<22}{t_nb * 1e6:>10.1f}us{t_np * 1e6:>10.1f}us{t_np / t_nb:>9.1f}x  {same}")

    if args.end_to_end:
        t = end_to_end()
        print(f"\n50 MPC steps (H=20, N=1000): numba {t['numba']:.3f}s, numpy {t['numpy']:.3f}s, "
              f"speedup {t['numpy'] / t['numba']:.1f}x")


if __name__ == "__main__":
    main()
