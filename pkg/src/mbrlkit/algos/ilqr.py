"""Iterative LQR with Levenberg-Marquardt style regularisation and a backtracking line search."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..dynamics import DynamicsModel
from ..errors import ConvergenceError, NonFiniteError


class QuadraticCost:
    """Stage cost ``(x-g)'Q(x-g) + u'Ru`` and terminal cost ``(x-g)'Qf(x-g)``."""

    def __init__(self, Q, R, Qf=None, x_goal=None):
        self.Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
        self.R = np.atleast_2d(np.asarray(R, dtype=np.float64))
        self.Qf = self.Q if Qf is None else np.atleast_2d(np.asarray(Qf, dtype=np.float64))
        n = self.Q.shape[0]
        self.x_goal = np.zeros(n) if x_goal is None else np.asarray(x_goal, dtype=np.float64)

    def stage(self, x, u) -> float:
        e = x - self.x_goal
        return float(e @ self.Q @ e + u @ self.R @ u)

    def terminal(self, x) -> float:
        e = x - self.x_goal
        return float(e @ self.Qf @ e)

    def stage_batch(self, X, U):
        E = X - self.x_goal
        return np.einsum("...i,ij,...j->...", E, self.Q, E) + np.einsum("...i,ij,...j->...", U, self.R, U)

    def expand(self, X, U):
        """Analytic ``c_x, c_u, c_xx, c_uu, c_ux`` per step plus terminal ``c_x, c_xx``."""
        T = len(U)
        E = X[:-1] - self.x_goal
        c_x = 2.0 * E @ self.Q.T
        c_u = 2.0 * U @ self.R.T
        c_xx = np.broadcast_to(2.0 * self.Q, (T,) + self.Q.shape).copy()
        c_uu = np.broadcast_to(2.0 * self.R, (T,) + self.R.shape).copy()
        c_ux = np.zeros((T, self.R.shape[0], self.Q.shape[0]))
        eT = X[-1] - self.x_goal
        return c_x, c_u, c_xx, c_uu, c_ux, 2.0 * self.Qf @ eT, 2.0 * self.Qf


def trajectory_cost(cost, X, U) -> float:
    return float(sum(cost.stage(X[t], U[t]) for t in range(len(U))) + cost.terminal(X[-1]))


def _fd_cost_expansion(cost, X, U, h=1e-5):
    """Finite-difference cost expansion for costs without ``expand``."""
    T, m = U.shape
    n = X.shape[1]

    def grad_hess(f, z):
        d = len(z)
        g = np.zeros(d)
        H = np.zeros((d, d))
        f0 = f(z)
        for i in range(d):
            ei = np.zeros(d)
            ei[i] = h
            g[i] = (f(z + ei) - f(z - ei)) / (2 * h)
            H[i, i] = (f(z + ei) - 2 * f0 + f(z - ei)) / (h * h)
            for j in range(i):
                ej = np.zeros(d)
                ej[j] = h
                H[i, j] = H[j, i] = (f(z + ei + ej) - f(z + ei - ej) - f(z - ei + ej) + f(z - ei - ej)) / (4 * h * h)
        return g, H

    c_x, c_u = np.zeros((T, n)), np.zeros((T, m))
    c_xx, c_uu, c_ux = np.zeros((T, n, n)), np.zeros((T, m, m)), np.zeros((T, m, n))
    for t in range(T):
        g, H = grad_hess(lambda z: cost.stage(z[:n], z[n:]), np.concatenate([X[t], U[t]]))
        c_x[t], c_u[t] = g[:n], g[n:]
        c_xx[t], c_uu[t], c_ux[t] = H[:n, :n], H[n:, n:], H[n:, :n]
    gT, HT = grad_hess(cost.terminal, X[-1])
    return c_x, c_u, c_xx, c_uu, c_ux, gT, HT


@dataclass
class Derivatives:
    f_x: np.ndarray  # (T, n, n)
    f_u: np.ndarray  # (T, n, m)
    c_x: np.ndarray
    c_u: np.ndarray
    c_xx: np.ndarray
    c_uu: np.ndarray
    c_ux: np.ndarray
    cT_x: np.ndarray
    cT_xx: np.ndarray


@dataclass
class Gains:
    k: np.ndarray  # (T, m)
    K: np.ndarray  # (T, m, n)
    dV1: float  # linear term of the expected cost change
    dV2: float  # quadratic term

    def expected_change(self, alpha: float) -> float:
        return alpha * self.dV1 + 0.5 * alpha * alpha * self.dV2


def ilqr_derivatives(model: DynamicsModel, cost, X, U, h: float = 1e-5) -> Derivatives:
    X = np.asarray(X, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    T = len(U)
    n, m = X.shape[1], U.shape[1]
    f_x = np.empty((T, n, n))
    f_u = np.empty((T, n, m))
    for t in range(T):
        f_x[t], f_u[t] = model.jacobians(X[t], U[t], h)
        if not (np.all(np.isfinite(f_x[t])) and np.all(np.isfinite(f_u[t]))):
            raise NonFiniteError(f"non-finite dynamics derivative at step {t}")
    parts = cost.expand(X, U) if hasattr(cost, "expand") else _fd_cost_expansion(cost, X, U, h)
    for name, arr in zip(("c_x", "c_u", "c_xx", "c_uu", "c_ux"), parts[:5]):
        bad = ~np.isfinite(arr.reshape(T, -1)).all(axis=1)
        if bad.any():
            raise NonFiniteError(f"non-finite cost derivative {name} at step {int(np.argmax(bad))}")
    if not (np.all(np.isfinite(parts[5])) and np.all(np.isfinite(parts[6]))):
        raise NonFiniteError(f"non-finite terminal cost derivative at step {T}")
    return Derivatives(f_x, f_u, *parts)


def ilqr_backward_pass(d: Derivatives, mu: float, U=None, lower=None, upper=None) -> Gains | None:
    """Riccati-like sweep from the horizon back to step 0.

    Returns ``None`` when the regularised ``Q_uu`` is not positive definite,
    which tells the caller to raise ``mu``. With control bounds, dimensions
    whose Newton step would leave the box are clamped to the boundary and
    lose their feedback; the free dimensions are re-solved given that step.
    """
    bounded = U is not None and (lower is not None or upper is not None)
    if bounded:
        U = np.asarray(U, dtype=np.float64)
        lower = np.full(U.shape[1], -np.inf) if lower is None else np.asarray(lower, dtype=np.float64)
        upper = np.full(U.shape[1], np.inf) if upper is None else np.asarray(upper, dtype=np.float64)
    T, n, m = d.f_u.shape
    V_x = d.cT_x.copy()
    V_xx = d.cT_xx.copy()
    k = np.zeros((T, m))
    K = np.zeros((T, m, n))
    dV1 = dV2 = 0.0
    reg = mu * np.eye(m)
    for t in range(T - 1, -1, -1):
        fx, fu = d.f_x[t], d.f_u[t]
        Q_x = d.c_x[t] + fx.T @ V_x
        Q_u = d.c_u[t] + fu.T @ V_x
        Q_xx = d.c_xx[t] + fx.T @ V_xx @ fx
        Q_uu = d.c_uu[t] + fu.T @ V_xx @ fu
        Q_ux = d.c_ux[t] + fu.T @ V_xx @ fx
        # the damped block only shapes the gains; the value update uses the plain one
        Q_uu_r = Q_uu + reg
        Q_uu_r = 0.5 * (Q_uu_r + Q_uu_r.T)
        Q_ux_r = Q_ux
        try:
            L = np.linalg.cholesky(Q_uu_r)
        except np.linalg.LinAlgError:
            return None
        # Q_uu^{-1} [Q_u, Q_ux] through the Cholesky factor
        rhs = np.column_stack([Q_u, Q_ux_r])
        sol = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
        k[t] = -sol[:, 0]
        K[t] = -sol[:, 1:]
        if bounded:
            target = U[t] + k[t]
            clamped = (target < lower) | (target > upper)
            if clamped.any():
                free = ~clamped
                k[t] = np.where(clamped, np.clip(target, lower, upper) - U[t], 0.0)
                K[t][clamped] = 0.0
                if free.any():
                    H = Q_uu_r[np.ix_(free, free)]
                    g = Q_u[free] + Q_uu_r[np.ix_(free, clamped)] @ k[t][clamped]
                    k[t][free] = -np.linalg.solve(H, g)
                    K[t][free] = -np.linalg.solve(H, Q_ux_r[free])
        kt, Kt = k[t], K[t]
        dV1 += float(kt @ Q_u)
        dV2 += float(kt @ Q_uu @ kt)
        V_x = Q_x + Kt.T @ Q_uu @ kt + Kt.T @ Q_u + Q_ux.T @ kt
        V_xx = Q_xx + Kt.T @ Q_uu @ Kt + Kt.T @ Q_ux + Q_ux.T @ Kt
        V_xx = 0.5 * (V_xx + V_xx.T)
    return Gains(k, K, dV1, dV2)


def ilqr_forward_pass(model: DynamicsModel, cost, X, U, gains: Gains, alpha: float, lower=None, upper=None):
    """Roll out ``u'_t = u_t + alpha k_t + K_t (x'_t - x_t)``, projected onto the control bounds.

    A candidate that leaves the finite numbers comes back with cost ``inf``.
    """
    X = np.asarray(X, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    T = len(U)
    Xn = np.empty_like(X)
    Un = np.empty_like(U)
    Xn[0] = X[0]
    with np.errstate(all="ignore"):
        for t in range(T):
            Un[t] = U[t] + alpha * gains.k[t] + gains.K[t] @ (Xn[t] - X[t])
            if lower is not None or upper is not None:
                Un[t] = np.clip(Un[t], lower, upper)
            Xn[t + 1] = model.predict(Xn[t], Un[t])
            if not np.all(np.isfinite(Xn[t + 1])):
                return Xn, Un, np.inf
        J = trajectory_cost(cost, Xn, Un)
    return Xn, Un, J if np.isfinite(J) else np.inf


@dataclass
class IlqrResult:
    X: np.ndarray
    U: np.ndarray
    cost_trace: list
    K: np.ndarray | None
    iterations: int
    accepted: int
    mu: float
    converged: bool


@dataclass
class IlqrSolver:
    horizon: int = 50
    max_iter: int = 100
    mu_init: float = 1e-6
    mu_min: float = 1e-6
    mu_max: float = 1e10
    mu_factor: float = 1.6
    tol: float = 1e-9
    line_search_steps: int = 11
    fd_step: float = 1e-5
    u_lower: np.ndarray | None = None  # optional control bounds
    u_upper: np.ndarray | None = None
    alphas: list = field(init=False)

    def __post_init__(self):
        self.alphas = [0.5**i for i in range(self.line_search_steps)]

    def solve(self, model, cost, x0, U_init) -> IlqrResult:
        return ilqr_solve(self, model, cost, x0, U_init)


def _rollout(model, x0, U):
    X = np.empty((len(U) + 1, len(x0)))
    X[0] = x0
    for t in range(len(U)):
        X[t + 1] = model.predict(X[t], U[t])
    return X


def ilqr_solve(solver: IlqrSolver, model: DynamicsModel, cost, x0, U_init) -> IlqrResult:
    x0 = np.asarray(x0, dtype=np.float64)
    U = np.array(U_init, dtype=np.float64).reshape(len(U_init), -1)
    lo, hi = solver.u_lower, solver.u_upper
    if lo is not None or hi is not None:
        U = np.clip(U, lo, hi)
    X = _rollout(model, x0, U)
    J = trajectory_cost(cost, X, U)
    if not np.isfinite(J):
        raise NonFiniteError("initial trajectory has non-finite cost")
    trace = [J]
    mu, delta = solver.mu_init, 1.0
    f = solver.mu_factor
    accepted = 0
    converged = False
    K = None
    it = 0

    def grow(mu, delta):
        delta = max(f, delta * f)
        return max(solver.mu_min, mu * delta), delta

    while it < solver.max_iter:
        it += 1
        d = ilqr_derivatives(model, cost, X, U, solver.fd_step)
        gains = ilqr_backward_pass(d, mu, U, lo, hi)
        while gains is None:
            mu, delta = grow(mu, delta)
            if mu > solver.mu_max:
                return _give_up(X, U, trace, K, it, accepted, mu)
            gains = ilqr_backward_pass(d, mu, U, lo, hi)
        K = gains.K
        for alpha in solver.alphas:
            Xn, Un, Jn = ilqr_forward_pass(model, cost, X, U, gains, alpha, lo, hi)
            if Jn < J:
                break
        else:
            if -gains.expected_change(1.0) < solver.tol * max(1.0, abs(J)):
                # nothing left to gain at this linearisation
                converged = True
                break
            mu, delta = grow(mu, delta)
            if mu > solver.mu_max:
                return _give_up(X, U, trace, K, it, accepted, mu)
            continue
        dJ = J - Jn
        X, U, J = Xn, Un, Jn
        trace.append(J)
        # tolerance scales with the cost so large costs are not judged below round-off
        if dJ < solver.tol * max(1.0, abs(J)):
            # a final polish below tolerance ends the solve and is not counted as progress
            converged = True
            break
        accepted += 1
        delta = min(1.0 / f, delta / f)
        mu = max(solver.mu_min, mu * delta)
    # cost trace over accepted iterates never increases
    assert all(b <= a for a, b in zip(trace, trace[1:]))
    return IlqrResult(X, U, trace, K, it, accepted, mu, converged)


def _give_up(X, U, trace, K, it, accepted, mu):
    best = IlqrResult(X, U, trace, K, it, accepted, mu, False)
    if accepted == 0:
        raise ConvergenceError(f"regularisation exceeded its cap (mu={mu:.3g}) before any step was accepted", best)
    return best
