"""Consensus dynamics on the sampled input space.

Three flows drive N agents (one per moment) towards a common input solving
every moment equation ``R_k u = f_k``:

* ``weak_flow``      u' = -u + P_C(u - grad V(u))
* ``strong_flow``    u' = -u + P_C(u - grad V(u) - eta(t) u)
* ``averaging_flow`` z' = sum_i (P_{M_i} z - z), the closed equation of the
  agent mean under u_i' = sum_k (P_{M_i} u_k - u_i)

All are integrated with fixed-step classical RK4.  Agents are stored as a
``(N, D)`` array, ``D = len(grid) * m``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, InvalidInputError, NotControllableError
from .gramian import MAX_CONDITION, MomentGrid, condition_estimate, default_grid, input_kernel
from .model import InputSignal

__all__ = [
    "EtaSchedule",
    "FlowState",
    "FlowReport",
    "MomentOperators",
    "projection_Mi",
    "weak_flow",
    "strong_flow",
    "averaging_flow",
    "project_consensus",
    "DEFAULT_T_FINAL",
    "DEFAULT_STEP",
    "DEFAULT_TOL",
]

DEFAULT_T_FINAL = 200.0
DEFAULT_STEP = 0.01
DEFAULT_TOL = 1e-6
DIVERGENCE_FACTOR = 10.0


@dataclass(frozen=True)
class EtaSchedule:
    """Vanishing, non-integrable weight ``eta(t) = c / (1 + t)**p``."""

    c: float = 1.0
    p: float = 1.0

    def __post_init__(self):
        if not self.c > 0:
            raise InvalidInputError("eta schedule needs c > 0")
        if not 0 < self.p <= 1:
            raise InvalidInputError("eta schedule needs 0 < p <= 1")

    def __call__(self, t):
        return self.c / (1.0 + t) ** self.p


class MomentOperators:
    """Discretized ``R_k``, ``R_k*`` and ``W_k^{-1}`` for every moment.

    ``R(U)`` applies ``R_k`` to agent ``k``; ``R_all(z)`` applies every
    ``R_k`` to one signal.
    """

    def __init__(self, system, moments, F, grid):
        self.system = system
        self.moments = moments
        self.grid = grid
        K = input_kernel(system, moments.moments, grid)  # (N, M, n, m)
        N, M, n, m = K.shape
        self.N, self.n, self.m, self.D = N, n, m, M * m
        # R_k* v = Ks[k] @ v ; R_k u = Kw[k] @ u
        self.Ks = K.transpose(0, 1, 3, 2).reshape(N, M * m, n)
        self.w = np.repeat(grid.weights, m)
        self.Kw = (self.Ks * self.w[None, :, None]).transpose(0, 2, 1).copy()
        W = self.Kw @ self.Ks
        W = 0.5 * (W + W.transpose(0, 2, 1))
        for k in range(N):
            cond = condition_estimate(W[k])
            if not cond <= MAX_CONDITION:
                raise NotControllableError(float(moments.moments[k]), cond)
        self.W = W
        self.Winv = np.linalg.inv(W)
        f = np.asarray(getattr(F, "values", F), dtype=float).reshape(-1)
        if f.size != N * n:
            raise InvalidInputError(f"moment vector must have length {N * n}")
        self.f = f.reshape(N, n)
        self.fscale = float(np.linalg.norm(self.f, axis=1).max())

    def R(self, U):
        return np.einsum("knd,kd->kn", self.Kw, U)

    def R_all(self, z):
        return np.einsum("knd,d->kn", self.Kw, z)

    def Rstar(self, V):
        return np.einsum("kdn,kn->kd", self.Ks, V)

    def moment_inputs(self):
        """Minimal-norm inputs ``u_k = R_k* W_k^{-1} f_k`` as agent rows."""
        return self.Rstar(np.einsum("knp,kp->kn", self.Winv, self.f))

    def gradient(self, U):
        """Rows ``R_k* (R_k u_k - f_k)`` of grad V."""
        return self.Rstar(self.R(U) - self.f)

    def V(self, U):
        return 0.5 * float(np.sum((self.R(U) - self.f) ** 2))

    def inner(self, a, b):
        return float(np.sum(self.w * a * b))

    def project(self, i, g):
        """``P_{M_i} g = g - R_i*(W_i^{-1} R_i g) + R_i*(W_i^{-1} f_i)``."""
        corr = self.Winv[i] @ (self.f[i] - self.Kw[i] @ g)
        return g + self.Ks[i] @ corr

    def signal(self, z):
        return InputSignal(self.grid, z.reshape(-1, self.m))


def project_consensus(U):
    """Orthogonal projection onto the consensus subspace: every row becomes the mean."""
    return np.broadcast_to(U.mean(axis=0), U.shape).copy()


def consensus_rhs(ops, U, eta=0.0):
    """Stacked right-hand side ``-u + P_C((1 - eta) u - grad V(u))``."""
    return -U + project_consensus((1.0 - eta) * U - ops.gradient(U))


def agent_rhs(ops, U, i, eta=0.0):
    """Right-hand side for agent ``i`` written out term by term."""
    N = U.shape[0]
    consensus = sum((1.0 - eta) * U[k] - U[i] for k in range(N)) / N
    grad = sum(
        ops.Ks[k] @ (ops.Kw[k] @ U[k]) - ops.Ks[k] @ ops.f[k] for k in range(N)
    ) / N
    return consensus - grad


def averaging_rhs(ops, z):
    """``z' = -sum_i R_i*(W_i^{-1} R_i z) + sum_i R_i*(W_i^{-1} f_i)``."""
    corr = np.einsum("knp,kp->kn", ops.Winv, ops.f - ops.R_all(z))
    return np.einsum("kdn,kn->d", ops.Ks, corr)


def projection_agents_rhs(ops, U):
    """``u_i' = sum_k (P_{M_i} u_k - u_i)`` for every agent."""
    N = U.shape[0]
    out = np.empty_like(U)
    for i in range(N):
        out[i] = sum(ops.project(i, U[k]) for k in range(N)) - N * U[i]
    return out


def spread(ops, U):
    """``max_{i,j} |u_i - u_j|_{L2}``."""
    if U.shape[0] < 2:
        return 0.0
    diff = U[:, None, :] - U[None, :, :]
    return float(np.sqrt(np.max(np.sum(ops.w * diff**2, axis=-1))))


@dataclass(frozen=True, eq=False)
class FlowState:
    """Agents at time ``time`` and their own-equation residuals ``|R_k u_k - f_k|``."""

    agents: tuple
    time: float
    residuals: np.ndarray


@dataclass(frozen=True, eq=False)
class FlowReport:
    """Logged trajectory and outcome of a flow run.

    ``max_residual`` is ``max_k |R_k z - f_k|`` for the agent mean ``z``,
    which is also ``final_input``.
    """

    method: str
    t: np.ndarray
    V: np.ndarray
    max_residual: np.ndarray
    spread: np.ndarray
    final_input: InputSignal
    final_state: FlowState
    converged: bool
    iterations: int
    mean_deviation: float = float("nan")

    def rows(self):
        return np.column_stack([self.t, self.V, self.max_residual, self.spread])

    def spread_monotone_tail(self, slack=1e-12):
        """Spread nonincreasing over the last half of the logged samples."""
        tail = self.spread[len(self.spread) // 2 :]
        return bool(np.all(np.diff(tail) <= slack))


def _rk4_step(rhs, y, t, h):
    k1 = rhs(y, t)
    k2 = rhs(y + 0.5 * h * k1, t + 0.5 * h)
    k3 = rhs(y + 0.5 * h * k2, t + 0.5 * h)
    k4 = rhs(y + h * k3, t + h)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _check_params(t_final, step, tol):
    if not (t_final > 0 and step > 0 and tol > 0):
        raise InvalidInputError("t_final, step and tol must be positive")


def _integrate(ops, method, rhs, y0, agents_of, t_final, step, tol, need_spread, log_every,
               extra=None):
    """Shared RK4 driver with logging, stopping and the divergence guard."""
    nsteps = int(np.ceil(t_final / step - 1e-9))
    if log_every is None:
        log_every = max(1, nsteps // 1000)
    log = {"t": [], "V": [], "res": [], "spread": []}
    deviation = 0.0

    def record(t, U):
        z = U.mean(axis=0)
        res = float(np.linalg.norm(ops.R_all(z) - ops.f, axis=1).max())
        log["t"].append(t)
        log["V"].append(ops.V(U))
        log["res"].append(res)
        log["spread"].append(spread(ops, U))
        return res

    y = y0
    r0 = record(0.0, agents_of(y))
    limit = DIVERGENCE_FACTOR * max(r0, ops.fscale)
    converged = False
    it = 0
    t = 0.0
    for it in range(1, nsteps + 1):
        y = _rk4_step(rhs, y, t, step)
        t = it * step
        U = agents_of(y)
        if not np.all(np.isfinite(U)):
            raise DivergenceError(f"{method}: non-finite state at t={t:g}; reduce the step")
        z = U.mean(axis=0)
        res = float(np.linalg.norm(ops.R_all(z) - ops.f, axis=1).max())
        if limit > 0 and res > limit:
            raise DivergenceError(
                f"{method}: residual {res:.3e} grew past {limit:.3e} at t={t:g}; reduce the step"
            )
        if extra is not None:
            deviation = max(deviation, extra(y))
        done = res < tol and (not need_spread or spread(ops, U) < tol)
        if done or it % log_every == 0 or it == nsteps:
            if not (log["t"] and log["t"][-1] == t):
                record(t, U)
        if done:
            converged = True
            break

    U = agents_of(y)
    z = U.mean(axis=0)
    state = FlowState(
        tuple(ops.signal(u) for u in U), t, np.linalg.norm(ops.R(U) - ops.f, axis=1)
    )
    return FlowReport(
        method,
        np.array(log["t"]),
        np.array(log["V"]),
        np.array(log["res"]),
        np.array(log["spread"]),
        ops.signal(z),
        state,
        converged,
        it,
        deviation if extra is not None else float("nan"),
    )


def projection_Mi(system, theta_i, f_i, g):
    """Orthogonal projection of ``g`` onto ``{u : R_i u = f_i}``."""
    mg = MomentGrid(np.array([theta_i], dtype=float), system.interval)
    ops = MomentOperators(system, mg, np.asarray(f_i, dtype=float), g.grid)
    return ops.signal(ops.project(0, g.samples.reshape(-1)))


def weak_flow(system, moments, F, grid=None, t_final=DEFAULT_T_FINAL, step=DEFAULT_STEP,
              tol=DEFAULT_TOL, log_every=None):
    """Projected-gradient consensus flow started from the moment inputs."""
    _check_params(t_final, step, tol)
    grid = default_grid(system) if grid is None else grid
    ops = MomentOperators(system, moments, F, grid)
    U0 = ops.moment_inputs()
    return _integrate(
        ops, "weak", lambda U, t: consensus_rhs(ops, U), U0, lambda U: U,
        t_final, step, tol, True, log_every,
    )


def strong_flow(system, moments, F, grid=None, t_final=DEFAULT_T_FINAL, step=DEFAULT_STEP,
                tol=DEFAULT_TOL, eta=None, start_index=0, log_every=None):
    """Consensus flow with vanishing damping ``eta(t)``.

    Every agent starts from the same moment input, the one at
    ``start_index`` (0-based).
    """
    _check_params(t_final, step, tol)
    grid = default_grid(system) if grid is None else grid
    eta = EtaSchedule() if eta is None else eta
    ops = MomentOperators(system, moments, F, grid)
    if not 0 <= start_index < ops.N:
        raise InvalidInputError(f"start_index must lie in [0, {ops.N})")
    U0 = np.repeat(ops.moment_inputs()[start_index][None, :], ops.N, axis=0)
    return _integrate(
        ops, "strong", lambda U, t: consensus_rhs(ops, U, eta(t)), U0, lambda U: U,
        t_final, step, tol, False, log_every,
    )


def averaging_flow(system, moments, F, grid=None, t_final=DEFAULT_T_FINAL, step=DEFAULT_STEP,
                   tol=DEFAULT_TOL, full_agents=False, log_every=None):
    """Projection-consensus flow, integrated through the closed mean equation.

    With ``full_agents=True`` the N agents are integrated alongside the mean
    and ``mean_deviation`` reports ``max_t |mean_i u_i(t) - z(t)|_{L2}``.
    """
    _check_params(t_final, step, tol)
    grid = default_grid(system) if grid is None else grid
    ops = MomentOperators(system, moments, F, grid)
    U0 = ops.moment_inputs()
    z0 = U0.mean(axis=0)
    if not full_agents:
        return _integrate(
            ops, "averaging", lambda z, t: averaging_rhs(ops, z), z0, lambda z: z[None, :],
            t_final, step, tol, False, log_every,
        )

    N = ops.N

    def rhs(Y, t):
        out = np.empty_like(Y)
        out[:N] = projection_agents_rhs(ops, Y[:N])
        out[N] = averaging_rhs(ops, Y[N])
        return out

    def deviation(Y):
        d = Y[:N].mean(axis=0) - Y[N]
        return float(np.sqrt(ops.inner(d, d)))

    Y0 = np.vstack([U0, z0[None, :]])
    return _integrate(
        ops, "averaging", rhs, Y0, lambda Y: Y[N:], t_final, step, tol, False, log_every,
        extra=deviation,
    )
