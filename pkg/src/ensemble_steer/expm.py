"""Matrix exponential by scaling and squaring with the [13/13] Pade approximant.

Batched over leading axes so that ``exp(A(theta) * tau_j)`` for a whole time
grid costs one vectorized call.  Diagonal and nilpotent batches take exact
shortcuts.
"""

import math

import numpy as np

from .errors import InvalidInputError

__all__ = ["matrix_exp", "expm_batch"]

# Higham (2005) coefficients of the degree-13 diagonal Pade approximant.
_B13 = (
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
)
_THETA13 = 5.371920351148152


def _pade13(a):
    ident = np.broadcast_to(np.eye(a.shape[-1]), a.shape)
    b = _B13
    a2 = a @ a
    a4 = a2 @ a2
    a6 = a4 @ a2
    u = a @ (
        a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2)
        + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident
    )
    v = (
        a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2)
        + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident
    )
    return np.linalg.solve(v - u, v + u)


def _is_diagonal(a):
    n = a.shape[-1]
    off = ~np.eye(n, dtype=bool)
    return not np.any(a[..., off])


def _nilpotent_power(a):
    """Return k such that a**k == 0 exactly for every matrix in the batch, else None."""
    n = a.shape[-1]
    p = a
    for k in range(1, n + 1):
        if not np.any(p):
            return k
        p = p @ a
    return None


def _series(a, order):
    n = a.shape[-1]
    out = np.broadcast_to(np.eye(n), a.shape).copy()
    term = out.copy()
    for k in range(1, order):
        term = term @ a / k
        out += term
    return out


def expm_batch(a):
    """Exponential of every square matrix in ``a`` (shape ``(..., n, n)``)."""
    a = np.asarray(a, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise InvalidInputError(f"expected square matrices, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("matrix has non-finite entries")
    if a.size == 0:
        return a.copy()
    if _is_diagonal(a):
        n = a.shape[-1]
        out = np.zeros_like(a)
        idx = np.arange(n)
        out[..., idx, idx] = np.exp(a[..., idx, idx])
        return out
    k = _nilpotent_power(a)
    if k is not None:
        return _series(a, k)

    norms = np.abs(a).sum(axis=-2).max(axis=-1)
    with np.errstate(divide="ignore"):
        s = np.ceil(np.log2(norms / _THETA13))
    s = np.where(np.isfinite(s), np.maximum(s, 0), 0).astype(int)
    scaled = a / np.ldexp(1.0, s)[..., None, None]
    r = _pade13(scaled)
    for step in range(int(s.max(initial=0))):
        active = s > step
        if np.all(active):
            r = r @ r
        else:
            r[active] = r[active] @ r[active]
    return r


def matrix_exp(m, t=1.0):
    """Return ``exp(m * t)`` for a single square matrix ``m``.

    Parameters
    ----------
    m : array_like, shape (n, n)
    t : float
        Time factor multiplying ``m``.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise InvalidInputError(f"expected a single square matrix, got shape {m.shape}")
    if not math.isfinite(t):
        raise InvalidInputError("time factor must be finite")
    return expm_batch(m * t)
