"""Minimal dense linear algebra on numpy float64 arrays.

Matrices are 2-d row-major float64 arrays, vectors are 1-d float64
arrays.  All operations are pure; inputs are never mutated.  Random
initializers are deterministic per seed (see :mod:`gatekit.rng`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng


class SvdConvergenceError(RuntimeError):
    """The SVD backend failed to converge.

    ``residual`` carries the best known reconstruction residual, or NaN
    when the backend produced no partial result.
    """

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


def as_vector(x) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {v.shape}")
    return v


def as_matrix(x) -> np.ndarray:
    w = np.asarray(x, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {w.shape}")
    return w


def matvec(w, x) -> np.ndarray:
    """Matrix-vector product y = W x."""
    w = as_matrix(w)
    x = as_vector(x)
    if w.shape[1] != x.shape[0]:
        raise ValueError(f"matvec dimension mismatch: {w.shape} @ {x.shape}")
    return w @ x


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    return a @ b


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD W = u @ diag(sigma) @ v.T with k = min(rows, cols).

    sigma is non-negative and sorted non-increasing.  Sign convention:
    the first nonzero entry of every column of v is non-negative, which
    makes the factorization deterministic for a fixed input (up to
    exactly repeated singular values).
    """

    u: np.ndarray      # rows x k
    sigma: np.ndarray  # k
    v: np.ndarray      # cols x k

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.v.T


def svd(w) -> SvdResult:
    """Deterministic thin SVD with a fixed sign convention."""
    w = as_matrix(w)
    if not np.isfinite(w).all():
        raise ValueError("svd input must be finite")
    try:
        u, s, vt = np.linalg.svd(w, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise SvdConvergenceError(f"SVD failed to converge: {exc}") from exc
    v = np.ascontiguousarray(vt.T)
    u = np.ascontiguousarray(u)
    # Flip the sign of (u_j, v_j) pairs so v's leading nonzero entry is >= 0.
    for j in range(v.shape[1]):
        col = v[:, j]
        nonzero = np.flatnonzero(col)
        if nonzero.size and col[nonzero[0]] < 0.0:
            v[:, j] = -col
            u[:, j] = -u[:, j]
    return SvdResult(u=u, sigma=s, v=v)


def svd_right_factor(w) -> np.ndarray:
    """Square orthogonal V (cols x cols) from the full SVD of W.

    Right-multiplying by this factor diagonalizes the Gram while keeping
    the shape: (W V).T (W V) has the squared singular values on its
    diagonal (padded with zeros when W is wide).  The thin ``svd`` V is
    not square for wide matrices, so compensation identities need this
    full factor.  Same leading-nonzero sign convention per column.
    """
    w = as_matrix(w)
    if not np.isfinite(w).all():
        raise ValueError("svd input must be finite")
    try:
        _, _, vt = np.linalg.svd(w, full_matrices=True)
    except np.linalg.LinAlgError as exc:
        raise SvdConvergenceError(f"SVD failed to converge: {exc}") from exc
    v = np.ascontiguousarray(vt.T)
    for j in range(v.shape[1]):
        col = v[:, j]
        nonzero = np.flatnonzero(col)
        if nonzero.size and col[nonzero[0]] < 0.0:
            v[:, j] = -col
    return v


def column_norms(w) -> np.ndarray:
    """Euclidean norm of each column of W."""
    w = as_matrix(w)
    return np.sqrt(np.einsum("ij,ij->j", w, w))


def kaiming_init(rows: int, cols: int, seed: int) -> np.ndarray:
    """Gaussian fan-in init: i.i.d. N(0, 2/cols), shape rows x cols.

    Uses the ReLU-family gain sqrt(2); draws are filled row-major and are
    bit-for-bit reproducible per seed.
    """
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be positive")
    std = np.sqrt(2.0 / cols)
    return (std * rng.standard_normal(seed, rows * cols)).reshape(rows, cols)


def gaussian_vector(n: int, seed: int) -> np.ndarray:
    """i.i.d. standard normal vector of length n, reproducible per seed."""
    if n < 1:
        raise ValueError("n must be positive")
    return rng.standard_normal(seed, n)


def silu(v) -> np.ndarray:
    """Elementwise x * sigmoid(x), numerically stable for large |x|."""
    v = np.asarray(v, dtype=np.float64)
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = v[pos] / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = v[~pos] * ev / (1.0 + ev)
    return out


def l2_deviation(a, b) -> float:
    """Euclidean norm of a - b."""
    a = as_vector(a)
    b = as_vector(b)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))
