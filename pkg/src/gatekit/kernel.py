"""Column-gather sparse GEMV and its latency micro-benchmark.

The kernel accumulates y += x_j * W[:, j] over kept columns only, so its
work is exactly k * rows multiply-accumulates.  Weights are stored
column-major (Fortran order) so each gathered column is contiguous; the
dense baseline in the benchmark runs the same kernel over all columns,
keeping storage and code path identical so measurements isolate the
effect of gating alone.  The kernel is single-threaded per call and the
benchmark driver takes one measurement at a time, which keeps latencies
interpretable.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .gating import GateMask, gate_magnitude, gate_wina, sparsity_to_k
from .linalg import as_matrix, as_vector, column_norms, gaussian_vector
from .rng import derive_seed

WARMUP_CALLS = 10
MIN_REPS = 30


def as_col_major(w) -> np.ndarray:
    """Copy a matrix into column-major (Fortran-ordered) float64 storage."""
    return np.asfortranarray(as_matrix(w))


@njit(cache=True)
def _gather_gemv(w, x, idx, out):  # pragma: no cover - compiled
    rows = w.shape[0]
    out[:] = 0.0
    macs = 0
    for t in range(idx.shape[0]):
        j = idx[t]
        xj = x[j]
        for i in range(rows):
            out[i] += xj * w[i, j]
        macs += rows
    return macs


@dataclass
class MacCounter:
    """Accumulates multiply-accumulate counts reported by the kernel."""

    macs: int = 0

    def add(self, n: int) -> None:
        self.macs += int(n)


def sparse_gemv(w, x, g: GateMask, counter: MacCounter | None = None) -> np.ndarray:
    """y = sum over kept j of x_j * W[:, j], touching only kept columns.

    ``w`` must be column-major (see ``as_col_major``).  Matches the dense
    matvec of the masked input to within accumulation roundoff.
    """
    w = as_matrix(w)
    if not w.flags.f_contiguous:
        raise ValueError("kernel weights must be column-major; use as_col_major")
    x = as_vector(x)
    if w.shape[1] != x.shape[0] or g.n != x.shape[0]:
        raise ValueError(
            f"dimension mismatch: w {w.shape}, x {x.shape}, mask {g.n}")
    out = np.empty(w.shape[0])
    macs = _gather_gemv(w, x, g.indices(), out)
    if counter is not None:
        counter.add(macs)
    return out


def wina_gated_gemv(w, x, c, k: int, counter: MacCounter | None = None) -> np.ndarray:
    """Weight-informed gated GEMV using precomputed column norms c.

    Equivalent to composing gate_wina with sparse_gemv.  ``c`` is checked
    against the actual column norms and rejected when stale.
    """
    w = as_matrix(w)
    x = as_vector(x)
    c = as_vector(c)
    if w.shape[1] != x.shape[0] or c.shape[0] != x.shape[0]:
        raise ValueError(
            f"dimension mismatch: w {w.shape}, x {x.shape}, c {c.shape}")
    fresh = column_norms(w)
    tol = 1e-10 * (1.0 + float(fresh.max(initial=0.0)))
    if np.abs(c - fresh).max(initial=0.0) > tol:
        raise ValueError("stale column norms: c does not match the matrix")
    return sparse_gemv(w, x, gate_wina(x, c, k), counter=counter)


@dataclass(frozen=True)
class LatencyRow:
    variant: str        # dense | teal | wina
    sparsity: float
    median_ns: float
    p10_ns: float
    p90_ns: float
    speedup: float
    median_with_gate_ns: float
    speedup_with_gate: float


@dataclass(frozen=True)
class LatencyReport:
    rows_cols: tuple
    batch: int
    reps: int
    seed: int
    sparsity_grid: tuple
    rows: tuple = field(default_factory=tuple)

    def row(self, variant: str, sparsity: float) -> LatencyRow:
        for r in self.rows:
            if r.variant == variant and r.sparsity == sparsity:
                return r
        raise KeyError(f"no row for ({variant}, {sparsity})")

    def to_csv(self) -> str:
        lines = ["variant,sparsity,batch,median_ns,p10_ns,p90_ns,speedup,"
                 "median_with_gate_ns,speedup_with_gate"]
        for r in self.rows:
            lines.append(
                f"{r.variant},{r.sparsity:g},{self.batch},{r.median_ns:.0f},"
                f"{r.p10_ns:.0f},{r.p90_ns:.0f},{r.speedup:.4f},"
                f"{r.median_with_gate_ns:.0f},{r.speedup_with_gate:.4f}")
        return "\n".join(lines) + "\n"

    def format_table(self) -> str:
        lines = [
            f"gather GEMV {self.rows_cols[0]}x{self.rows_cols[1]} "
            f"batch={self.batch} reps={self.reps} seed={self.seed}",
            f"{'variant':<8}{'sparsity':>9}{'median_ms':>11}{'p10_ms':>9}"
            f"{'p90_ms':>9}{'speedup':>9}{'with_gate_ms':>13}",
        ]
        for r in self.rows:
            lines.append(
                f"{r.variant:<8}{r.sparsity:>9.2f}{r.median_ns / 1e6:>11.3f}"
                f"{r.p10_ns / 1e6:>9.3f}{r.p90_ns / 1e6:>9.3f}{r.speedup:>9.3f}"
                f"{r.median_with_gate_ns / 1e6:>13.3f}")
        return "\n".join(lines)


def _time_interleaved(groups: list, reps: int, batch: int) -> dict:
    """Round-robin timing: one call per runner per rep, one at a time.

    ``groups`` is a list of [(key, fn), ...] lists; group order is fixed
    per rep while the order inside each group rotates between reps.
    Interleaving makes slow drift hit every runner equally, and the
    rotation cancels positional bias (frequency scaling, cache state)
    between runners of one group, e.g. the gated variants at the same
    sparsity level.
    """
    samples = {key: np.empty(reps) for group in groups for key, _ in group}
    for r in range(reps):
        for group in groups:
            shift = r % len(group)
            ordered = group[shift:] + group[:shift]
            for key, fn in ordered:
                t0 = time.perf_counter_ns()
                fn()
                samples[key][r] = (time.perf_counter_ns() - t0) / batch
    return samples


def _stats(samples: np.ndarray) -> tuple[float, float, float]:
    return (float(np.median(samples)),
            float(np.percentile(samples, 10)),
            float(np.percentile(samples, 90)))


def bench_latency(shape, batch: int = 1, sparsity_grid=(0.0, 0.25, 0.5, 0.65, 0.9),
                  reps: int = 50, seed: int = 0) -> LatencyReport:
    """Measure dense vs teal-gated vs wina-gated kernel latency.

    One warmed-up measurement at a time, ``reps`` timed calls per cell,
    medians reported in nanoseconds per GEMV.  Gate computation (scoring
    plus top-k) is excluded from the main columns and included in the
    ``with_gate`` columns.  Latency medians are measurements and vary run
    to run; the input data is fully seed-derived.
    """
    rows_n, cols_n = int(shape[0]), int(shape[1])
    if reps < MIN_REPS:
        raise ValueError(f"reps must be >= {MIN_REPS}, got {reps}")
    if batch < 1:
        raise ValueError("batch must be >= 1")
    grid = [float(s) for s in sparsity_grid]
    if any(not 0.0 <= s < 1.0 for s in grid):
        raise ValueError("sparsity grid must lie in [0, 1)")

    w = as_col_major(
        gaussian_vector(rows_n * cols_n, derive_seed(seed, 0)).reshape(rows_n, cols_n))
    xs = [gaussian_vector(cols_n, derive_seed(seed, 1, b)) for b in range(batch)]
    norms = column_norms(w)
    out = np.empty(rows_n)
    full_idx = np.arange(cols_n, dtype=np.int64)

    for _ in range(WARMUP_CALLS):
        _gather_gemv(w, xs[0], full_idx, out)

    def masks_for(variant: str, k: int) -> list[np.ndarray]:
        if variant == "teal":
            return [gate_magnitude(x, k).indices() for x in xs]
        return [gate_wina(x, norms, k).indices() for x in xs]

    def run_dense():
        for x in xs:
            _gather_gemv(w, x, full_idx, out)

    # The two gated variants at one (sparsity, mode) cell form a group
    # and run back to back in rotating order.  The dense runner joins the
    # zero-sparsity group when the grid has one (identical working set,
    # so the speedup baseline sees the same positions); otherwise it
    # measures alone.
    groups: list = []
    dense_entry = (("dense", 0.0, "plain"), run_dense)
    if not any(s == 0.0 for s in grid):
        groups.append([dense_entry])
    for s in grid:
        k = sparsity_to_k(s, cols_n)
        for mode in ("plain", "gate"):
            group = []
            for variant in ("teal", "wina"):
                if mode == "plain":
                    idxs = masks_for(variant, k)

                    def run(idxs=idxs):
                        for x, idx in zip(xs, idxs):
                            _gather_gemv(w, x, idx, out)
                elif variant == "teal":
                    def run(k=k):
                        for x in xs:
                            _gather_gemv(w, x, gate_magnitude(x, k).indices(),
                                         out)
                else:
                    def run(k=k):
                        for x in xs:
                            _gather_gemv(w, x, gate_wina(x, norms, k).indices(),
                                         out)
                group.append(((variant, s, mode), run))
            if s == 0.0 and mode == "plain":
                group.insert(0, dense_entry)
            groups.append(group)

    for group in groups:
        for _, fn in group:
            fn()
    samples = _time_interleaved(groups, reps, batch)

    dense_med, dense_p10, dense_p90 = _stats(samples[("dense", 0.0, "plain")])
    rows = [LatencyRow(
        variant="dense", sparsity=0.0, median_ns=dense_med, p10_ns=dense_p10,
        p90_ns=dense_p90, speedup=1.0, median_with_gate_ns=dense_med,
        speedup_with_gate=1.0)]
    for variant in ("teal", "wina"):
        for s in grid:
            med, p10, p90 = _stats(samples[(variant, s, "plain")])
            med_g, _, _ = _stats(samples[(variant, s, "gate")])
            rows.append(LatencyRow(
                variant=variant, sparsity=s, median_ns=med, p10_ns=p10,
                p90_ns=p90, speedup=dense_med / med,
                median_with_gate_ns=med_g, speedup_with_gate=dense_med / med_g))

    return LatencyReport(rows_cols=(rows_n, cols_n), batch=batch, reps=reps,
                         seed=seed, sparsity_grid=tuple(grid), rows=tuple(rows))
