"""Sparse-activation gating toolkit.

Dense linear algebra on numpy float64, deterministic portable RNG,
top-k gate functions (magnitude, weight-informed, sparse-plus-low-rank),
SVD-based column orthogonalization with computational invariance, a toy
decoder block, a synthetic approximation-error benchmark with exhaustive
oracles, a greedy per-layer sparsity allocator, an analytic cost model,
and a column-gather sparse GEMV micro-benchmark.
"""

__version__ = "0.1.0"
