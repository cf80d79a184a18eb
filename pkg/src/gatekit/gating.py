"""Top-k gate functions and mask application.

Three gating strategies are implemented:

* ``gate_magnitude`` -- keep the k entries of largest |x_i| (the
  TEAL/CATS-style baseline; CATS is this gate restricted by the caller
  to MLP-type layers).
* ``gate_wina`` -- keep the k entries of largest |x_i * c_i| where c is
  the column-norm vector of the consuming weight matrix ("wina" method
  label throughout the toolkit).
* ``rsparse_apply`` -- magnitude-gated sparse branch plus a truncated-SVD
  low-rank correction of the dropped residual ("rsparse" method label).

Ties in all top-k selections break toward the lowest index, which makes
every mask deterministic.  All functions are pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import as_matrix, as_vector, matvec, svd


@dataclass(frozen=True)
class GateMask:
    """Binary keep/drop vector with exactly k ones."""

    keep: np.ndarray  # 1-d int8 of 0/1

    def __post_init__(self):
        keep = np.ascontiguousarray(self.keep, dtype=np.int8)
        if keep.ndim != 1:
            raise ValueError("mask must be 1-d")
        if not np.isin(keep, (0, 1)).all():
            raise ValueError("mask entries must be 0 or 1")
        keep.setflags(write=False)
        object.__setattr__(self, "keep", keep)

    @property
    def n(self) -> int:
        return int(self.keep.shape[0])

    @property
    def k(self) -> int:
        return int(self.keep.sum())

    def indices(self) -> np.ndarray:
        """Kept indices, ascending, int64."""
        return np.flatnonzero(self.keep).astype(np.int64)

    def to_bits(self) -> list[int]:
        return [int(b) for b in self.keep]

    @classmethod
    def from_bits(cls, bits) -> "GateMask":
        return cls(keep=np.asarray(list(bits), dtype=np.int8))

    @classmethod
    def from_indices(cls, n: int, kept) -> "GateMask":
        keep = np.zeros(n, dtype=np.int8)
        keep[np.asarray(list(kept), dtype=np.int64)] = 1
        return cls(keep=keep)

    def __eq__(self, other) -> bool:
        return isinstance(other, GateMask) and np.array_equal(self.keep, other.keep)

    def __hash__(self):
        return hash(self.keep.tobytes())


def sparsity_to_k(sparsity: float, n: int) -> int:
    """K = clamp(round_half_up((1 - sparsity) * n), 0, n)."""
    if not 0.0 <= sparsity <= 1.0:
        raise ValueError(f"sparsity must lie in [0, 1], got {sparsity}")
    k = int(np.floor((1.0 - sparsity) * n + 0.5))
    return min(max(k, 0), n)


def topk_mask(scores, k: int) -> GateMask:
    """Mask keeping the k largest scores, ties broken by lowest index.

    Equivalent to taking the first k positions of a stable descending
    sort, but computed with an O(n) partition: keep everything strictly
    above the k-th largest value, then fill remaining slots with the
    lowest-index entries equal to it.
    """
    scores = as_vector(scores)
    n = scores.shape[0]
    if not 0 <= k <= n:
        raise ValueError(f"k must lie in [0, {n}], got {k}")
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    keep = np.zeros(n, dtype=np.int8)
    if k == 0:
        return GateMask(keep=keep)
    if k == n:
        keep[:] = 1
        return GateMask(keep=keep)
    threshold = np.partition(scores, n - k)[n - k]
    above = scores > threshold
    keep[above] = 1
    short = k - int(above.sum())
    if short > 0:
        keep[np.flatnonzero(scores == threshold)[:short]] = 1
    return GateMask(keep=keep)


def gate_magnitude(x, k: int) -> GateMask:
    """Top-k gate on |x| (magnitude baseline)."""
    return topk_mask(np.abs(as_vector(x)), k)


def gate_wina(x, c, k: int) -> GateMask:
    """Top-k gate on |x * c| with c the consuming matrix's column norms."""
    x = as_vector(x)
    c = as_vector(c)
    if x.shape != c.shape:
        raise ValueError(f"length mismatch: x {x.shape} vs c {c.shape}")
    if (c < 0).any():
        raise ValueError("column-norm weights must be non-negative")
    return topk_mask(np.abs(x * c), k)


def apply_gate(x, g: GateMask) -> np.ndarray:
    """Zero out dropped coordinates: x_i if keep_i else 0."""
    x = as_vector(x)
    if x.shape[0] != g.n:
        raise ValueError(f"length mismatch: x {x.shape[0]} vs mask {g.n}")
    return np.where(g.keep == 1, x, 0.0)


@dataclass(frozen=True)
class LowRankFactors:
    """Rank-r factors with a_r @ b_r.T the best rank-r approximation of W.T.

    a_r = V_r sqrt(S_r) (n_in x r) and b_r = U_r sqrt(S_r) (n_out x r)
    from the truncated SVD of W, so b_r @ (a_r.T @ z) approximates W @ z.
    """

    a_r: np.ndarray
    b_r: np.ndarray
    r: int


def lowrank_factors(w, r: int) -> LowRankFactors:
    w = as_matrix(w)
    if not 1 <= r <= min(w.shape):
        raise ValueError(f"rank must lie in [1, {min(w.shape)}], got {r}")
    res = svd(w)
    root = np.sqrt(res.sigma[:r])
    return LowRankFactors(a_r=res.v[:, :r] * root, b_r=res.u[:, :r] * root, r=r)


def rsparse_apply(w, x, k: int, factors: LowRankFactors) -> np.ndarray:
    """Sparse branch plus low-rank residual: W x_hat + B_r (A_r.T (x - x_hat)).

    x_hat keeps the k largest-magnitude entries of x.  With full-rank
    factors the result equals W x up to SVD reconstruction error; with
    k = n the residual is exactly zero.
    """
    w = as_matrix(w)
    x = as_vector(x)
    if w.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: {w.shape} @ {x.shape}")
    if factors.a_r.shape[0] != w.shape[1] or factors.b_r.shape[0] != w.shape[0]:
        raise ValueError("low-rank factor shapes do not match the matrix")
    x_hat = apply_gate(x, gate_magnitude(x, k))
    return matvec(w, x_hat) + factors.b_r @ (factors.a_r.T @ (x - x_hat))
