"""Parameter-dependent system family, time grids, input signals and targets."""

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, IncompatibleGridError, InvalidInputError
from .expm import expm_batch

__all__ = [
    "ParameterInterval",
    "EnsembleSystem",
    "TimeGrid",
    "InputSignal",
    "TargetProfile",
    "PolynomialTarget",
    "TabulatedTarget",
    "horner",
    "eval_system",
    "shift_target",
]


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def horner(coeffs, theta):
    """Evaluate polynomials with ascending coefficients along the last axis.

    ``coeffs`` has shape ``(..., d + 1)``; the result has shape
    ``np.shape(theta) + coeffs.shape[:-1]``.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    theta = np.asarray(theta, dtype=float)
    t = theta.reshape(theta.shape + (1,) * (coeffs.ndim - 1))
    out = np.zeros(theta.shape + coeffs.shape[:-1])
    for k in range(coeffs.shape[-1] - 1, -1, -1):
        out = out * t + coeffs[..., k]
    return out


def _pad_polys(entries, rows, cols, name):
    """Nested lists ``[[ [c0, c1, ...], ... ]]`` to an array (rows, cols, d + 1)."""
    if len(entries) != rows or any(len(r) != cols for r in entries):
        raise InvalidInputError(f"{name} must be a {rows}x{cols} array of polynomials")
    deg = 1
    for r in entries:
        for p in r:
            p = np.atleast_1d(p)
            if p.ndim != 1 or p.size == 0:
                raise InvalidInputError(f"{name} entries must be non-empty coefficient lists")
            deg = max(deg, p.size)
    out = np.zeros((rows, cols, deg))
    for i, r in enumerate(entries):
        for j, p in enumerate(r):
            p = np.atleast_1d(np.asarray(p, dtype=float))
            out[i, j, : p.size] = p
    if not np.all(np.isfinite(out)):
        raise InvalidInputError(f"{name} has non-finite coefficients")
    return out


@dataclass(frozen=True)
class ParameterInterval:
    """Compact parameter interval ``[lo, hi]`` with ``lo < hi``."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi) and self.lo < self.hi):
            raise InvalidInputError(f"need finite lo < hi, got [{self.lo}, {self.hi}]")

    @property
    def length(self):
        return self.hi - self.lo

    def check(self, theta):
        theta = np.asarray(theta, dtype=float)
        slack = 1e-12 * self.length
        if not np.all(np.isfinite(theta)):
            raise DomainError("parameter value is not finite")
        if np.any(theta < self.lo - slack) or np.any(theta > self.hi + slack):
            raise DomainError(
                f"parameter outside interval [{self.lo}, {self.hi}]: "
                f"{theta[(theta < self.lo - slack) | (theta > self.hi + slack)]}"
            )
        return theta

    def linspace(self, num):
        return np.linspace(self.lo, self.hi, num)


@dataclass(frozen=True, eq=False)
class EnsembleSystem:
    """The family ``(A(theta), B(theta))`` with polynomial entries.

    ``A`` has shape ``(n, n, d + 1)`` and ``B`` shape ``(n, m, d + 1)``;
    coefficients are stored in ascending degree along the last axis.
    """

    A: np.ndarray
    B: np.ndarray
    horizon: float
    interval: ParameterInterval
    name: str = ""

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float)
        if A.ndim != 3 or A.shape[0] != A.shape[1]:
            raise InvalidInputError(f"A must have shape (n, n, d+1), got {A.shape}")
        if B.ndim != 3 or B.shape[0] != A.shape[0]:
            raise InvalidInputError(f"B must have shape (n, m, d+1), got {B.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise InvalidInputError("system coefficients must be finite")
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise InvalidInputError(f"horizon must be positive, got {self.horizon}")
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "B", _frozen(B))
        object.__setattr__(self, "horizon", float(self.horizon))

    @classmethod
    def from_entries(cls, A, B, horizon, interval, name=""):
        """Build from nested coefficient lists, e.g. ``A=[[[0, 1]]]`` for A(theta)=theta."""
        n = len(A)
        if n == 0 or len(B) != n or len(B[0]) == 0:
            raise InvalidInputError("A and B must have matching non-zero row counts")
        m = len(B[0])
        if not isinstance(interval, ParameterInterval):
            interval = ParameterInterval(*interval)
        return cls(
            _pad_polys(A, n, n, "A"), _pad_polys(B, n, m, "B"), horizon, interval, name
        )

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    def evaluate(self, theta):
        """Vectorized ``(A(theta), B(theta))`` for an array of parameters."""
        theta = self.interval.check(theta)
        return horner(self.A, theta), horner(self.B, theta)


def eval_system(system, theta):
    """Return ``(A(theta), B(theta))`` by Horner evaluation of each entry."""
    theta = float(theta)
    A, B = system.evaluate(theta)
    return A, B


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Quadrature nodes and weights on ``[0, horizon]``."""

    nodes: np.ndarray
    weights: np.ndarray
    horizon: float
    rule: str = "custom"

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if nodes.ndim != 1 or nodes.shape != weights.shape or nodes.size == 0:
            raise InvalidInputError("nodes and weights must be matching 1-d arrays")
        if np.any(np.diff(nodes) <= 0) or nodes[0] < 0 or nodes[-1] > self.horizon:
            raise InvalidInputError("nodes must be strictly ascending inside [0, horizon]")
        if np.any(weights <= 0):
            raise InvalidInputError("quadrature weights must be positive")
        if abs(weights.sum() - self.horizon) > 1e-12 * self.horizon:
            raise InvalidInputError("quadrature weights must sum to the horizon")
        object.__setattr__(self, "nodes", _frozen(nodes))
        object.__setattr__(self, "weights", _frozen(weights))
        object.__setattr__(self, "horizon", float(self.horizon))

    @classmethod
    def gauss_legendre(cls, horizon, panels=32, order=4):
        """Composite Gauss-Legendre rule: ``panels`` equal panels of ``order`` nodes."""
        x, w = np.polynomial.legendre.leggauss(order)
        edges = np.linspace(0.0, horizon, panels + 1)
        h = np.diff(edges)
        nodes = (edges[:-1, None] + 0.5 * (x[None, :] + 1.0) * h[:, None]).ravel()
        weights = (0.5 * w[None, :] * h[:, None]).ravel()
        # rescale so the weights sum to the horizon to the last bit
        weights *= horizon / weights.sum()
        return cls(nodes, weights, horizon, f"gauss-legendre:{panels}x{order}")

    @classmethod
    def trapezoid(cls, horizon, intervals=128):
        """Uniform composite trapezoid rule including both endpoints."""
        nodes = np.linspace(0.0, horizon, intervals + 1)
        weights = np.full(intervals + 1, horizon / intervals)
        weights[[0, -1]] *= 0.5
        return cls(nodes, weights, horizon, f"trapezoid:{intervals}")

    def __len__(self):
        return self.nodes.size

    def compatible(self, other):
        return self is other or (
            self.nodes.shape == other.nodes.shape
            and np.array_equal(self.nodes, other.nodes)
            and np.array_equal(self.weights, other.weights)
        )


@dataclass(frozen=True, eq=False)
class InputSignal:
    """Vector-valued input sampled on a time grid; ``samples`` has shape (M, m)."""

    grid: TimeGrid
    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2 or s.shape[0] != len(self.grid):
            raise InvalidInputError(
                f"samples must have shape ({len(self.grid)}, m), got {s.shape}"
            )
        if not np.all(np.isfinite(s)):
            raise InvalidInputError("signal samples must be finite")
        object.__setattr__(self, "samples", _frozen(s))

    @classmethod
    def zeros(cls, grid, m):
        return cls(grid, np.zeros((len(grid), m)))

    @property
    def m(self):
        return self.samples.shape[1]

    def _check(self, other):
        if not self.grid.compatible(other.grid):
            raise IncompatibleGridError("signals live on different time grids")

    def inner(self, other):
        """L2 inner product on [0, T] via the grid quadrature."""
        self._check(other)
        return float(np.einsum("j,jk,jk->", self.grid.weights, self.samples, other.samples))

    def norm(self):
        return float(np.sqrt(np.einsum("j,jk,jk->", self.grid.weights, self.samples, self.samples)))

    def __add__(self, other):
        self._check(other)
        return InputSignal(self.grid, self.samples + other.samples)

    def __sub__(self, other):
        self._check(other)
        return InputSignal(self.grid, self.samples - other.samples)

    def __mul__(self, c):
        return InputSignal(self.grid, float(c) * self.samples)

    __rmul__ = __mul__

    def __neg__(self):
        return InputSignal(self.grid, -self.samples)


class TargetProfile:
    """Map ``theta -> f(theta)`` in R^n, evaluable on the parameter interval."""

    kind = "abstract"

    def evaluate(self, thetas):
        """Values at an array of parameters, shape ``(len(thetas), n)``."""
        raise NotImplementedError

    def __call__(self, theta):
        return self.evaluate(np.atleast_1d(float(theta)))[0]


@dataclass(frozen=True, eq=False)
class PolynomialTarget(TargetProfile):
    """Target with polynomial components; ``coeffs`` has shape (n, d + 1)."""

    coeffs: np.ndarray
    kind = "polynomial"

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim == 1:
            c = c[:, None]
        if c.ndim != 2 or not np.all(np.isfinite(c)):
            raise InvalidInputError("polynomial target needs finite (n, d+1) coefficients")
        object.__setattr__(self, "coeffs", _frozen(c))

    @classmethod
    def from_lists(cls, polys):
        return cls(_pad_polys([polys], 1, len(polys), "target")[0])

    @classmethod
    def constant(cls, value):
        return cls(np.asarray(value, dtype=float).reshape(-1, 1))

    @property
    def n(self):
        return self.coeffs.shape[0]

    def evaluate(self, thetas):
        return horner(self.coeffs, np.asarray(thetas, dtype=float).reshape(-1))


@dataclass(frozen=True, eq=False)
class TabulatedTarget(TargetProfile):
    """Target given by samples, linearly interpolated between sample points."""

    thetas: np.ndarray
    values: np.ndarray
    kind = "tabulated"

    def __post_init__(self):
        t = np.asarray(self.thetas, dtype=float).reshape(-1)
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != t.size or t.size == 0:
            raise InvalidInputError("tabulated target needs one value row per sample point")
        if np.any(np.diff(t) <= 0):
            raise InvalidInputError("tabulated sample points must be strictly ascending")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise InvalidInputError("tabulated target must be finite")
        object.__setattr__(self, "thetas", _frozen(t))
        object.__setattr__(self, "values", _frozen(v))

    @property
    def n(self):
        return self.values.shape[1]

    def evaluate(self, thetas):
        thetas = np.asarray(thetas, dtype=float).reshape(-1)
        lo, hi = self.thetas[0], self.thetas[-1]
        if np.any(thetas < lo - 1e-12 * max(1.0, hi - lo)) or np.any(
            thetas > hi + 1e-12 * max(1.0, hi - lo)
        ):
            raise DomainError("tabulated target evaluated outside its sample range")
        return np.stack(
            [np.interp(thetas, self.thetas, self.values[:, i]) for i in range(self.n)], axis=-1
        )


def shift_target(system, f, x0, thetas):
    """Reduce steering from ``x0(theta)`` to steering from the origin.

    Returns the tabulated profile ``f(theta) - exp(A(theta) T) x0(theta)`` on
    ``thetas``.
    """
    thetas = system.interval.check(np.sort(np.asarray(thetas, dtype=float).reshape(-1)))
    A, _ = system.evaluate(thetas)
    drift = expm_batch(A * system.horizon)
    values = f.evaluate(thetas) - np.einsum("kij,kj->ki", drift, x0.evaluate(thetas))
    return TabulatedTarget(thetas, values)
