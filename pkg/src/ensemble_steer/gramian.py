"""Reachability operator, its adjoint, Gramians and the reproducing kernel.

Everything is evaluated with the quadrature of one shared time grid, so the
discrete operators are exact adjoints of each other and the kernel blocks are
exactly the Gram matrices of the sampled adjoint signals.
"""

import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve

from .errors import IllConditionedGramianError, IncompatibleGridError, InvalidInputError
from .expm import expm_batch
from .model import InputSignal, ParameterInterval, TimeGrid

__all__ = [
    "MomentGrid",
    "BlockGramian",
    "default_grid",
    "input_kernel",
    "reachability_apply",
    "reach_many",
    "adjoint_apply",
    "gramian",
    "kernel_Q",
    "kernel_blocks",
    "assemble_block_gramian",
    "block_gramian",
    "MAX_CONDITION",
    "condition_estimate",
]

MAX_CONDITION = 1e14


def default_grid(system, panels=32, order=4):
    return TimeGrid.gauss_legendre(system.horizon, panels, order)


def _check_grid(system, grid):
    if abs(grid.horizon - system.horizon) > 1e-12 * system.horizon:
        raise IncompatibleGridError(
            f"grid horizon {grid.horizon} does not match system horizon {system.horizon}"
        )


def input_kernel(system, thetas, grid):
    """Samples of ``exp(A(theta)(T - s)) B(theta)`` for every theta and grid node.

    Returns an array of shape ``(len(thetas), len(grid), n, m)``.
    """
    _check_grid(system, grid)
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    A, B = system.evaluate(thetas)
    lags = system.horizon - grid.nodes
    E = expm_batch(A[:, None, :, :] * lags[None, :, None, None])
    return E @ B[:, None, :, :]


@dataclass(frozen=True, eq=False)
class MomentGrid:
    """Strictly ascending moments ``theta_1 < ... < theta_N`` inside the interval."""

    moments: np.ndarray
    interval: ParameterInterval

    def __post_init__(self):
        t = np.asarray(self.moments, dtype=float).reshape(-1)
        if t.size == 0:
            raise InvalidInputError("moment grid needs at least one moment")
        if np.any(np.diff(t) <= 0):
            raise InvalidInputError("moments must be strictly ascending")
        self.interval.check(t)
        t.setflags(write=False)
        object.__setattr__(self, "moments", t)

    @classmethod
    def equidistant(cls, interval, N):
        """N equidistant moments including both endpoints (midpoint when N = 1)."""
        if N < 1:
            raise InvalidInputError("N must be at least 1")
        if N == 1:
            return cls(np.array([0.5 * (interval.lo + interval.hi)]), interval)
        return cls(np.linspace(interval.lo, interval.hi, N), interval)

    @property
    def N(self):
        return self.moments.size

    @property
    def delta_max(self):
        return float(np.max(np.diff(self.moments))) if self.N > 1 else 0.0

    def __len__(self):
        return self.N


def reach_many(system, u, thetas):
    """``R u`` evaluated at each theta; shape ``(len(thetas), n)``."""
    K = input_kernel(system, thetas, u.grid)
    return np.einsum("j,kjnm,jm->kn", u.grid.weights, K, u.samples)


def reachability_apply(system, u, theta):
    """Final state ``int_0^T exp(A(theta)(T-s)) B(theta) u(s) ds`` from the origin."""
    return reach_many(system, u, [theta])[0]


def adjoint_apply(system, v, theta, grid):
    """The signal ``s -> B(theta)^T exp(A(theta)^T (T-s)) v`` on ``grid``."""
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size != system.n:
        raise InvalidInputError(f"expected a vector of length {system.n}")
    K = input_kernel(system, [theta], grid)[0]
    return InputSignal(grid, np.einsum("jnm,n->jm", K, v))


def kernel_blocks(system, thetas, etas, grid):
    """Kernel blocks ``Q(theta_a, eta_b)``, shape ``(len(thetas), len(etas), n, n)``."""
    Kt = input_kernel(system, thetas, grid)
    Ke = Kt if etas is thetas else input_kernel(system, etas, grid)
    return np.einsum("j,ajnm,bjpm->abnp", grid.weights, Kt, Ke)


def kernel_Q(system, theta, eta, grid=None):
    """Reproducing kernel block ``int_0^T e^{A(th)(T-s)} B(th) B(eta)^T e^{A(eta)^T(T-s)} ds``."""
    grid = default_grid(system) if grid is None else grid
    return kernel_blocks(system, [theta], [eta], grid)[0, 0]


def gramian(system, theta, grid=None):
    """Controllability Gramian ``W(theta) = Q(theta, theta)`` on [0, T]."""
    W = kernel_Q(system, theta, theta, grid)
    return 0.5 * (W + W.T)


def assemble_block_gramian(system, moments, grid, ridge=0.0):
    """Unchecked ``(N n) x (N n)`` block matrix with blocks ``Q(theta_l, theta_k)``."""
    th = moments.moments
    N, n = th.size, system.n
    blocks = kernel_blocks(system, th, th, grid)
    Q = blocks.transpose(0, 2, 1, 3).reshape(N * n, N * n)
    Q = 0.5 * (Q + Q.T)
    if ridge:
        Q = Q + ridge * np.eye(N * n)
    return Q


def condition_estimate(Q):
    lam = np.linalg.eigvalsh(Q)
    if lam[0] <= 0:
        return float("inf")
    return float(lam[-1] / lam[0])


@dataclass(frozen=True, eq=False)
class BlockGramian:
    """Gramian of the parallel connection of the moment systems.

    The Cholesky factor is computed on first use and cached.
    """

    matrix: np.ndarray
    moments: MomentGrid
    condition: float
    ridge: float = 0.0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def factor(self):
        """Lower-triangular Cholesky factor of ``matrix``."""
        with self._lock:
            if "L" not in self._cache:
                try:
                    L = np.linalg.cholesky(self.matrix)
                except np.linalg.LinAlgError:
                    raise IllConditionedGramianError(
                        "Cholesky factorization of the block Gramian failed", float("inf")
                    ) from None
                L.setflags(write=False)
                self._cache["L"] = L
            return self._cache["L"]

    def solve(self, rhs):
        """Solve ``Q x = rhs`` with the cached Cholesky factor."""
        return cho_solve((self.factor, True), np.asarray(rhs, dtype=float))


def block_gramian(system, moments, grid=None, ridge=0.0, max_condition=MAX_CONDITION):
    """Assemble and validate the block Gramian.

    Parameters
    ----------
    ridge : float
        Optional Tikhonov shift added to the diagonal.  Off by default; only
        use it knowingly, since it changes the interpolation conditions.

    Raises
    ------
    IllConditionedGramianError
        If the matrix is not numerically positive definite or its condition
        estimate exceeds ``max_condition``.
    """
    grid = default_grid(system) if grid is None else grid
    if ridge < 0:
        raise InvalidInputError("ridge must be nonnegative")
    Q = assemble_block_gramian(system, moments, grid, ridge)
    cond = condition_estimate(Q)
    if not cond <= max_condition:
        raise IllConditionedGramianError(
            "block Gramian is singular or ill-conditioned; moments may be too close "
            "or the family is not ensemble controllable",
            cond,
        )
    Q.setflags(write=False)
    return BlockGramian(Q, moments, cond, ridge)
