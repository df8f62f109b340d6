""" Dense and triangular matrix kernels shared by every filter.

All functions are pure: inputs are never modified and fresh arrays are
returned. Upper-triangular factors follow the convention A = UᵀU with a
nonnegative (positive for nonsingular A) diagonal.
"""
from __future__ import annotations
from dataclasses import dataclass
import logging

import numpy as np
import scipy.linalg
from scipy.linalg import lapack

from .errors import InvalidArgumentError, NotPositiveDefiniteError, SingularFactorError, SingularInnovationError
from .types import Array, SolveSide


LOGGER = logging.getLogger(__name__)


EPS = float(np.finfo(np.float64).eps)
SYMMETRY_RTOL = 1e-12


@dataclass(frozen=True)
class LduSplit:
    """ Strictly-lower, diagonal and strictly-upper parts of a square matrix. """
    strict_lower: Array
    diagonal: Array
    strict_upper: Array

    def reconstruct(self) -> Array:
        return self.strict_lower + self.diagonal + self.strict_upper


def _as_matrix(a: Array, name: str) -> Array:
    out = np.asarray(a, dtype=np.float64)
    if out.ndim != 2 or out.shape[0] < 1 or out.shape[1] < 1:
        raise InvalidArgumentError(f'{name} must be a non-empty 2-d array, got shape {out.shape}')
    return out


def _as_square(a: Array, name: str) -> Array:
    out = _as_matrix(a, name)
    if out.shape[0] != out.shape[1]:
        raise InvalidArgumentError(f'{name} must be square, got shape {out.shape}')
    return out


def symmetrize(a: Array) -> Array:
    return (a + a.T) / 2


def is_symmetric(a: Array, rtol: float = SYMMETRY_RTOL) -> bool:
    scale = float(np.max(np.abs(a), initial=0.0))
    return float(np.max(np.abs(a - a.T), initial=0.0)) <= rtol * scale


def householder_block_triangularize(prearray: Array, lead_cols: int) -> Array:
    """ Apply one orthogonal rotation Q to the whole pre-array.

    Q upper-triangularizes the first `lead_cols` columns (Householder QR,
    followed by row sign flips so that the leading diagonal is nonnegative),
    and the same Q is applied to every trailing column.
    """
    a = _as_matrix(prearray, 'prearray')
    rows, cols = a.shape
    if not 1 <= lead_cols <= cols or lead_cols > rows:
        raise InvalidArgumentError(f'cannot triangularize {lead_cols} leading columns of a {rows}x{cols} array')

    q, r = scipy.linalg.qr(a[:, :lead_cols], mode='full')
    post = q.T @ a
    post[:, :lead_cols] = r  # exact zeros below the diagonal

    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    post[:lead_cols] *= signs[:, None]
    return post


def cholesky_upper(a: Array) -> Array:
    """ Upper Cholesky factor U with UᵀU = A and positive diagonal. """
    a = _as_square(a, 'a')
    if not is_symmetric(a):
        raise InvalidArgumentError('cholesky_upper expects a symmetric matrix')
    if not np.all(np.isfinite(a)):
        raise NotPositiveDefiniteError(0, 'matrix has non-finite entries')
    u, info = lapack.dpotrf(a, lower=0, clean=1)
    if info > 0:
        raise NotPositiveDefiniteError(info - 1)
    assert info == 0, f'dpotrf rejected its arguments: {info=}'
    return u


def cholesky_upper_derivative(a: Array, da: Array, u: Array | None = None) -> Array:
    """ Forward-mode derivative of `cholesky_upper` in the direction `da`.

    The row-oriented factorization loop is differentiated entry by entry, so
    the result is upper triangular by construction and satisfies
    dUᵀU + UᵀdU = dA. Pass the primal factor `u` to skip refactorization.
    """
    a = _as_square(a, 'a')
    da = _as_square(da, 'da')
    if a.shape != da.shape:
        raise InvalidArgumentError(f'shape mismatch: {a.shape} vs {da.shape}')
    if u is None:
        u = cholesky_upper(a)
    n = len(a)
    du = np.zeros_like(u)
    for j in range(n):
        ujj = u[j, j]
        du[j, j] = (da[j, j] - 2 * (u[:j, j] @ du[:j, j])) / (2 * ujj)
        if j + 1 < n:
            coupling = du[:j, j] @ u[:j, j + 1:] + u[:j, j] @ du[:j, j + 1:]
            du[j, j + 1:] = (da[j, j + 1:] - coupling - u[j, j + 1:] * du[j, j]) / ujj
    return du


def check_factor_diagonal(u: Array, threshold: float) -> None:
    """ Raise if some diagonal entry of `u` is at or below `threshold` in magnitude. """
    d = np.abs(np.diag(u))
    bad = np.flatnonzero(~(d > threshold))
    if bad.size:
        raise SingularFactorError(int(bad[0]))


def check_innovation_factor(re_sqrt: Array, scale: float) -> None:
    """ Reject an innovation factor whose diagonal is not safely positive.

    The logarithm of every diagonal entry enters the likelihood, so entries
    at or below eps·scale are treated as a singular innovation covariance.
    """
    d = np.diag(re_sqrt)
    bad = np.flatnonzero(~(d > EPS * scale))
    if bad.size:
        index = int(bad[0])
        raise SingularInnovationError(index, f'innovation factor diagonal {d[index]:.3e} at index {index} is below {EPS * scale:.3e}')


def solve_upper(u: Array, b: Array, side: SolveSide = 'left') -> Array:
    """ Solve U·X = B ('left'), X·U = B ('right') or Uᵀ·X = B ('transposed-left'). """
    u = _as_square(u, 'u')
    b = np.asarray(b, dtype=np.float64)
    check_factor_diagonal(u, EPS * float(np.max(np.abs(u))))

    if side == 'left':
        return scipy.linalg.solve_triangular(u, b, lower=False)
    elif side == 'transposed-left':
        return scipy.linalg.solve_triangular(u, b, trans='T', lower=False)
    elif side == 'right':
        if b.ndim != 2:
            raise InvalidArgumentError('right-inverse solve expects a 2-d right-hand side')
        return scipy.linalg.solve_triangular(u, b.T, trans='T', lower=False).T
    else:
        raise InvalidArgumentError(f'Unrecognized side: {side}')


def strict_ldu_split(m: Array) -> LduSplit:
    m = _as_square(m, 'm')
    return LduSplit(
            strict_lower=np.tril(m, -1),
            diagonal=np.diag(np.diag(m)),
            strict_upper=np.triu(m, 1),
            )


def condition_number(a: Array) -> float:
    """ 2-norm condition number; `inf` for non-finite input or when σ_min ≤ eps·σ_max. """
    if not np.all(np.isfinite(a)):
        return float('inf')
    s = np.linalg.svd(a, compute_uv=False)
    if not s[-1] > EPS * s[0]:
        return float('inf')
    return float(s[0] / s[-1])
