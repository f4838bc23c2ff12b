"""Moment collocation: minimal-norm inputs interpolating the target at the moments.

Also hosts the a-priori error machinery (covering radius, rate bound, moment
spacing threshold, sampled kernel constants) and the construction of targets
``f = R R* g`` whose minimal-norm preimage ``R* g`` is known exactly.
"""

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import (
    EnsembleError,
    InvalidInputError,
    NotControllableError,
    SolverAccuracyWarning,
)
from .gramian import (
    MAX_CONDITION,
    MomentGrid,
    block_gramian,
    condition_estimate,
    default_grid,
    input_kernel,
    kernel_blocks,
    reach_many,
)
from .model import InputSignal, TargetProfile, TimeGrid, horner

__all__ = [
    "MomentVector",
    "CollocationSolution",
    "SourceProfile",
    "KernelTarget",
    "RateConstants",
    "SupError",
    "DeltaMetrics",
    "moment_vector",
    "solve_collocation",
    "minimal_norm_input",
    "sup_error",
    "delta_metrics",
    "rate_bound",
    "required_spacing",
    "estimate_constants",
    "oracle_target",
    "default_eval_points",
    "RESIDUAL_WARN",
    "error_profile",
]

RESIDUAL_WARN = 1e-6
DEFAULT_EVAL_POINTS = 201


def default_eval_points(interval, num=DEFAULT_EVAL_POINTS):
    return interval.linspace(num)


@dataclass(frozen=True, eq=False)
class MomentVector:
    """Targets at the moments stacked block-wise into a length ``N n`` vector."""

    values: np.ndarray
    moments: MomentGrid

    @property
    def n(self):
        return self.values.size // self.moments.N

    def blocks(self):
        return self.values.reshape(self.moments.N, -1)


def moment_vector(f, moments):
    """Stack ``f(theta_1), ..., f(theta_N)``."""
    values = np.asarray(f.evaluate(moments.moments), dtype=float).reshape(-1)
    values.setflags(write=False)
    return MomentVector(values, moments)


@dataclass(frozen=True, eq=False)
class CollocationSolution:
    """Result of :func:`solve_collocation`.

    ``alpha`` holds the coefficients of the input in the basis of adjoint
    signals ``B(theta_k)^T exp(A(theta_k)^T (T - s)) e_i``, ordered block by
    moment.  ``residual`` is ``|I_N u - F| / |F|`` recomputed from the input.
    """

    alpha: np.ndarray
    input: InputSignal
    residual: float
    moments: MomentGrid
    condition: float
    rank: int
    method: str
    warnings: tuple = ()


def _adjoint_basis(system, moments, grid):
    """Matrix whose column ``(k, i)`` is the sampled adjoint signal for e_i at theta_k."""
    K = input_kernel(system, moments.moments, grid)  # (N, M, n, m)
    N, M, n, m = K.shape
    return K.transpose(1, 3, 0, 2).reshape(M * m, N * n)


def _pinv_discrepancy(G, F, rtol):
    """Minimal-norm solution of ``G^T y = F`` by truncated SVD.

    The rank is the smallest one whose residual reaches ``rtol * |F|`` or,
    when rounding makes that impossible, twice the attainable floor.
    """
    U, S, Vt = np.linalg.svd(G, full_matrices=False)
    cond = float((S[0] / S[-1]) ** 2) if S[-1] > 0 else float("inf")
    fnorm = np.linalg.norm(F)
    if fnorm == 0.0 or S[0] == 0.0:
        return np.zeros(G.shape[0]), np.zeros(G.shape[1]), 0, cond
    p = Vt @ F
    outside = np.linalg.norm(F - Vt.T @ p)
    tail = np.sqrt(np.append(np.cumsum((p**2)[::-1])[::-1], 0.0) + outside**2)
    usable = int(np.sum(S > S[0] * np.finfo(float).eps * max(G.shape)))
    tail = tail[: usable + 1]
    target = max(rtol * fnorm, 2.0 * tail[1:].min())
    rank = int(np.argmax(tail[1:] <= target)) + 1
    c = p[:rank] / S[:rank]
    y = U[:, :rank] @ c
    alpha = Vt[:rank].T @ (c / S[:rank])
    return y, alpha, rank, cond


def solve_collocation(system, moments, F, grid=None, method="svd", rtol=1e-13, ridge=0.0):
    """Minimal L2-norm input with ``R u (theta_k) = f(theta_k)`` for every moment.

    Parameters
    ----------
    method : {"svd", "cholesky"}
        ``"cholesky"`` solves ``Q alpha = F`` with the validated block Gramian
        and raises :class:`IllConditionedGramianError` when Q is not safely
        positive definite.  ``"svd"`` (default) works with the square-root
        factor of Q, which squares away half of the conditioning loss, and
        truncates the spectrum at the discrepancy level ``rtol``; it stays
        usable for the dense moment grids where Q is numerically singular.
    ridge : float
        Tikhonov shift for the Cholesky path only.
    """
    grid = default_grid(system) if grid is None else grid
    Fv = np.asarray(F.values if isinstance(F, MomentVector) else F, dtype=float).reshape(-1)
    if Fv.size != moments.N * system.n:
        raise InvalidInputError(f"moment vector must have length {moments.N * system.n}")
    Phi = _adjoint_basis(system, moments, grid)
    M, m = len(grid), system.m
    sqrt_w = np.repeat(np.sqrt(grid.weights), m)

    if method == "cholesky":
        bg = block_gramian(system, moments, grid, ridge=ridge)
        alpha = bg.solve(Fv)
        samples = (Phi @ alpha).reshape(M, m)
        rank, cond = Fv.size, bg.condition
    elif method == "svd":
        if ridge:
            raise InvalidInputError("ridge applies to the cholesky method only")
        y, alpha, rank, cond = _pinv_discrepancy(sqrt_w[:, None] * Phi, Fv, rtol)
        samples = (y / sqrt_w).reshape(M, m)
    else:
        raise InvalidInputError(f"unknown collocation method {method!r}")

    u = InputSignal(grid, samples)
    fnorm = np.linalg.norm(Fv)
    achieved = reach_many(system, u, moments.moments).reshape(-1)
    residual = float(np.linalg.norm(achieved - Fv) / fnorm) if fnorm > 0 else float(
        np.linalg.norm(achieved)
    )
    notes = []
    if residual > RESIDUAL_WARN:
        msg = f"collocation residual {residual:.3e} exceeds {RESIDUAL_WARN:.0e}"
        notes.append(msg)
        warnings.warn(msg, SolverAccuracyWarning, stacklevel=2)
    alpha = np.asarray(alpha)
    alpha.setflags(write=False)
    return CollocationSolution(alpha, u, residual, moments, cond, rank, method, tuple(notes))


def minimal_norm_input(system, theta, target, grid=None):
    """Minimal-energy input steering the single system at ``theta`` to ``target``."""
    grid = default_grid(system) if grid is None else grid
    target = np.asarray(target, dtype=float).reshape(-1)
    K = input_kernel(system, [theta], grid)[0]
    W = np.einsum("j,jnm,jpm->np", grid.weights, K, K)
    W = 0.5 * (W + W.T)
    cond = condition_estimate(W)
    if not cond <= MAX_CONDITION:
        raise NotControllableError(theta, cond)
    coeff = np.linalg.solve(W, target)
    return InputSignal(grid, np.einsum("jnm,n->jm", K, coeff))


class SupError(NamedTuple):
    value: float
    theta: float


def sup_error(system, u, f, eval_points):
    """Largest Euclidean steering error over ``eval_points`` and where it occurs."""
    pts = np.asarray(eval_points, dtype=float).reshape(-1)
    if pts.size == 0:
        raise InvalidInputError("eval_points must be non-empty")
    err = np.linalg.norm(reach_many(system, u, pts) - f.evaluate(pts), axis=-1)
    k = int(np.argmax(err))
    return SupError(float(err[k]), float(pts[k]))


def error_profile(system, u, f, eval_points):
    """Per-point steering error norms (the ``error.csv`` column)."""
    pts = np.asarray(eval_points, dtype=float).reshape(-1)
    return np.linalg.norm(reach_many(system, u, pts) - f.evaluate(pts), axis=-1)


class DeltaMetrics(NamedTuple):
    delta_N: float
    delta_max: float
    single_moment: bool


def delta_metrics(moments, interval):
    """Covering radius of the moments in the interval and the largest moment gap.

    ``delta_max`` is reported as 0 with ``single_moment`` set when N = 1.
    """
    th = interval.check(moments.moments)
    gaps = np.diff(th)
    half_gap = 0.5 * gaps.max() if gaps.size else 0.0
    delta_N = max(th[0] - interval.lo, interval.hi - th[-1], half_gap)
    return DeltaMetrics(float(delta_N), float(gaps.max()) if gaps.size else 0.0, th.size == 1)


@dataclass(frozen=True)
class RateConstants:
    """Sampled kernel constants entering the a-priori bounds.

    These are grid maxima, hence lower estimates of the true suprema.
    """

    M_Q: float
    L_Q: float
    R_norm: float
    resolution: int


def rate_bound(n, consts, delta_max, g_norm):
    """A-priori bound on ``|u_N - u*|_{L2}`` for targets ``f = R R* g``."""
    if not delta_max > 0:
        raise InvalidInputError("delta_max must be positive")
    if min(consts.M_Q, consts.L_Q, g_norm) < 0:
        raise InvalidInputError("constants must be nonnegative")
    inner = 3 * n * (4 * consts.M_Q * math.exp(-2.0 / delta_max) + consts.L_Q * math.sqrt(delta_max))
    return math.sqrt(delta_max * inner) * g_norm


def required_spacing(epsilon, n, consts, g_norm, theta_span):
    """Largest moment gap certifying a sup-norm steering error of at most ``epsilon``."""
    if consts.R_norm <= 0 or g_norm <= 0:
        raise InvalidInputError("operator norm and source norm must be positive")
    if epsilon <= 0 or theta_span <= 0 or n <= 0:
        raise InvalidInputError("epsilon, n and theta_span must be positive")
    denom = (
        consts.R_norm**2
        * g_norm**2
        * 3
        * n
        * (4 * consts.M_Q * math.exp(-2.0 / theta_span) + consts.L_Q * math.sqrt(abs(theta_span)))
    )
    return epsilon**2 / denom


def _power_iteration(S, tol=1e-8, maxiter=100000):
    x = np.ones(S.shape[0]) / math.sqrt(S.shape[0])
    lam = 0.0
    for _ in range(maxiter):
        y = S @ x
        new = float(x @ y)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        x = y / ny
        if abs(new - lam) <= tol * abs(new):
            return new
        lam = new
    return lam


def estimate_constants(system, resolution=128, grid=None):
    """Sample ``M_Q``, ``L_Q`` and ``|R|`` on a ``resolution`` x ``resolution`` grid.

    ``L_Q`` is the largest difference quotient of the kernel in the
    ``n * max|entry|`` norm between horizontally or vertically adjacent grid
    points.  ``|R|`` is the operator norm ``L2([0,T]) -> L2(P)``, found by
    power iteration on the trapezoid discretization of ``R R*`` (whose
    kernel is Q).
    """
    if resolution < 2:
        raise InvalidInputError("resolution must be at least 2")
    grid = default_grid(system) if grid is None else grid
    n = system.n
    th = system.interval.linspace(resolution)
    h = th[1] - th[0]
    Q = kernel_blocks(system, th, th, grid)  # (r, r, n, n)
    M_Q = float(np.abs(Q).max())
    d_tau = n * np.abs(np.diff(Q, axis=0)).max(axis=(-2, -1)) / h
    d_eta = n * np.abs(np.diff(Q, axis=1)).max(axis=(-2, -1)) / h
    L_Q = float(max(d_tau.max(), d_eta.max()))

    w = np.full(resolution, h)
    w[[0, -1]] *= 0.5
    d = np.repeat(np.sqrt(w), n)
    big = Q.transpose(0, 2, 1, 3).reshape(resolution * n, resolution * n)
    S = d[:, None] * (0.5 * (big + big.T)) * d[None, :]
    R_norm = math.sqrt(max(_power_iteration(S), 0.0))
    return RateConstants(M_Q, L_Q, R_norm, resolution)


@dataclass(frozen=True, eq=False)
class SourceProfile:
    """Polynomial source ``g`` on the parameter interval; ``coeffs`` is (n, d + 1)."""

    coeffs: np.ndarray
    interval: object

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim == 1:
            c = c[:, None]
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def constant(cls, value, interval):
        return cls(np.asarray(value, dtype=float).reshape(-1, 1), interval)

    @property
    def n(self):
        return self.coeffs.shape[0]

    def evaluate(self, thetas):
        return horner(self.coeffs, np.asarray(thetas, dtype=float).reshape(-1))

    @property
    def norm(self):
        """``|g|_{L2(P)}``, exact for polynomials via Gauss-Legendre."""
        order = self.coeffs.shape[1] + 1
        x, w = np.polynomial.legendre.leggauss(order)
        lo, hi = self.interval.lo, self.interval.hi
        eta = lo + 0.5 * (x + 1) * (hi - lo)
        vals = self.evaluate(eta)
        return float(math.sqrt(0.5 * (hi - lo) * np.sum(w[:, None] * vals**2)))


class KernelTarget(TargetProfile):
    """``f(theta) = int_P Q(theta, eta) g(eta) d eta`` by composite Gauss-Legendre on P."""

    kind = "kernel-generated"

    def __init__(self, system, source, grid, panels=16, order=4):
        self.system = system
        self.source = source
        self.grid = grid
        # TimeGrid doubles as a quadrature rule on [0, |P|]
        rule = TimeGrid.gauss_legendre(system.interval.length, panels, order)
        self.etas = system.interval.lo + rule.nodes
        self.eta_weights = rule.weights

    @property
    def n(self):
        return self.system.n

    def evaluate(self, thetas):
        thetas = np.asarray(thetas, dtype=float).reshape(-1)
        Q = kernel_blocks(self.system, thetas, self.etas, self.grid)
        g = self.source.evaluate(self.etas)
        return np.einsum("q,kqnp,qp->kn", self.eta_weights, Q, g)

    def minimal_norm_preimage(self):
        """``R* g``: the samples ``int_P B(eta)^T exp(A(eta)^T (T-s)) g(eta) d eta``."""
        K = input_kernel(self.system, self.etas, self.grid)
        g = self.source.evaluate(self.etas)
        return InputSignal(self.grid, np.einsum("q,qjnm,qn->jm", self.eta_weights, K, g))


def oracle_target(system, g, eval_points, grid=None, panels=16, order=4, atol=1e-8):
    """Target with a known minimal-norm preimage.

    Returns ``(f, u_star)`` with ``f = R R* g`` and ``u_star = R* g``, both
    discretized with the same quadrature on P.  Raises if ``R u_star`` and
    ``f`` disagree at ``eval_points`` by more than ``atol`` (relative to
    ``max |f|`` when that exceeds one).
    """
    grid = default_grid(system) if grid is None else grid
    if g.n != system.n:
        raise InvalidInputError(f"source must have {system.n} components")
    f = KernelTarget(system, g, grid, panels, order)
    u_star = f.minimal_norm_preimage()
    pts = np.asarray(eval_points, dtype=float).reshape(-1)
    if pts.size:
        fv = f.evaluate(pts)
        gap = np.abs(reach_many(system, u_star, pts) - fv).max()
        if gap > atol * max(1.0, np.abs(fv).max()):
            raise EnsembleError(f"oracle postcondition violated: |R u* - f| = {gap:.3e}")
    return f, u_star
