"""Analytic ops/memory/parameter factors for a gated decoder block.

Yardstick: the 4d^2 + 3dm multiply-accumulates of the seven GEMVs in one
decoder block (q, k, v, o projections plus up, gate, down).  Attention
score FLOPs (QK^T, AV), norms and embeddings are excluded by definition.
Factors are relative to this dense yardstick; an ops factor of 0.5 means
half the dense MACs.  A brute-force per-column MAC counter serves as the
oracle for the closed forms.

The weight-informed gate's scoring overhead (one elementwise product and
a top-k selection, O(d) per token versus O(d^2) for the GEMV) is
reported separately by ``gating_overhead_ratio`` and never folded into
the ops factor, keeping the teal/wina factor exactly the active ratio.
"""

from __future__ import annotations

from dataclasses import dataclass

from .allocator import AllocationPlan

COST_METHODS = ("dense", "teal", "wina", "rsparse")
MEM_BOUNDS = ("lb", "ub")


@dataclass(frozen=True)
class BlockShape:
    d: int  # hidden size
    m: int  # MLP width

    def __post_init__(self):
        if self.d < 1 or self.m < 1:
            raise ValueError("d and m must be positive")

    def gemv_layers(self) -> list[tuple[str, int, int]]:
        """(name, n_in, n_out) of the seven block GEMVs, in block order."""
        d, m = self.d, self.m
        return [
            ("q", d, d), ("k", d, d), ("v", d, d), ("o", d, d),
            ("up", d, m), ("gate", d, m), ("down", m, d),
        ]


@dataclass(frozen=True)
class CostReport:
    method: str
    active_ratio: float
    rank: int
    ops_factor: float
    mem_factor_lb: float
    mem_factor_ub: float
    extra_params_factor: float
    dense_macs: int

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "active_ratio": self.active_ratio,
            "rank": self.rank,
            "ops_factor": self.ops_factor,
            "mem_factor_lb": self.mem_factor_lb,
            "mem_factor_ub": self.mem_factor_ub,
            "extra_params_factor": self.extra_params_factor,
            "dense_macs": self.dense_macs,
        }


def _check_method(method: str) -> str:
    if method not in COST_METHODS:
        raise ValueError(
            f"unknown method {method!r}, expected one of {COST_METHODS}")
    return method


def _check_ratio_rank(a: float, r: int) -> None:
    if not 0.0 <= a <= 1.0:
        raise ValueError(f"active ratio must lie in [0, 1], got {a}")
    if r < 0:
        raise ValueError(f"rank must be non-negative, got {r}")


def dense_block_macs(shape: BlockShape) -> int:
    """Exactly 4d^2 + 3dm."""
    d, m = shape.d, shape.m
    return 4 * d * d + 3 * d * m


def ops_factor(method: str, a: float, r: int, shape: BlockShape) -> float:
    """Block MAC count relative to dense.

    dense -> 1; teal and wina -> a (gating overhead reported separately);
    rsparse -> a + r * (11d - 6ad + (3 - a)m) / (4d^2 + 3dm).
    """
    _check_method(method)
    _check_ratio_rank(a, r)
    if method == "dense":
        return 1.0
    if method in ("teal", "wina"):
        return a
    d, m = shape.d, shape.m
    return a + r * (11 * d - 6 * a * d + (3 - a) * m) / dense_block_macs(shape)


def mem_factor(method: str, a: float, r: int, shape: BlockShape,
               bound: str = "ub") -> float:
    """Weight data fetched relative to dense.

    rsparse's lower bound gathers only needed rows of the input-side
    factor (equals its ops factor); the upper bound prefetches all of it:
    a + r (11d + 3m) / (4d^2 + 3dm).
    """
    _check_method(method)
    _check_ratio_rank(a, r)
    if bound not in MEM_BOUNDS:
        raise ValueError(f"bound must be one of {MEM_BOUNDS}, got {bound!r}")
    if method == "dense":
        return 1.0
    if method in ("teal", "wina"):
        return a
    if bound == "lb":
        return ops_factor(method, a, r, shape)
    d, m = shape.d, shape.m
    return a + r * (11 * d + 3 * m) / dense_block_macs(shape)


def extra_params_factor(method: str, r: int, shape: BlockShape) -> float:
    """Added parameters relative to dense: 0 except rsparse's factor pairs."""
    _check_method(method)
    if r < 0:
        raise ValueError(f"rank must be non-negative, got {r}")
    if method != "rsparse":
        return 0.0
    d, m = shape.d, shape.m
    return r * (11 * d + 3 * m) / dense_block_macs(shape)


def gating_overhead_ratio(d: int) -> float:
    """Per-token scoring cost over the dense GEMV cost of a d x d layer.

    Scoring one input costs O(d) against the GEMV's O(d^2), so the ratio
    is 1/d: far below 0.1% at typical hidden sizes.
    """
    if d < 1:
        raise ValueError("d must be positive")
    return 1.0 / d


def count_block_macs(shape: BlockShape, method: str, a: float, r: int) -> int:
    """Brute-force MAC oracle: enumerate kept columns per gated GEMV.

    Requires a * n_in to be integral for every layer so the count is
    exact; the analytic factors must then agree to within roundoff.
    """
    _check_method(method)
    _check_ratio_rank(a, r)
    total = 0
    for _, n_in, n_out in shape.gemv_layers():
        if method == "dense":
            kept = n_in
        else:
            kept_f = a * n_in
            kept = int(round(kept_f))
            if abs(kept_f - kept) > 1e-9:
                raise ValueError(
                    f"a * n_in = {kept_f} is not integral; the counter "
                    "only supports exact column counts")
        for _col in range(kept):
            total += n_out
        if method == "rsparse":
            total += (n_in - kept) * r + r * n_out
    return total


def flops_savings(shape: BlockShape, plan: AllocationPlan) -> float:
    """Fraction of dense GEMV MACs removed by a seven-layer sparsity plan.

    The plan's entries map onto the block GEMVs in order
    (q, k, v, o, up, gate, down).
    """
    layers = shape.gemv_layers()
    if len(plan.per_layer_sparsity) != len(layers):
        raise ValueError(
            f"plan has {len(plan.per_layer_sparsity)} layers; the block "
            f"needs exactly {len(layers)} (q, k, v, o, up, gate, down)")
    active = 0.0
    for s, (_, n_in, n_out) in zip(plan.per_layer_sparsity, layers):
        if not 0.0 <= s <= 1.0:
            raise ValueError(f"plan sparsity {s} out of [0, 1]")
        active += (1.0 - s) * n_in * n_out
    return 1.0 - active / dense_block_macs(shape)


def cost_table(shape: BlockShape, a: float, r: int) -> list[CostReport]:
    """One CostReport per method at the given active ratio and rank."""
    dense = dense_block_macs(shape)
    out = []
    for method in COST_METHODS:
        rr = r if method == "rsparse" else 0
        out.append(CostReport(
            method=method,
            active_ratio=a,
            rank=rr,
            ops_factor=ops_factor(method, a, rr, shape),
            mem_factor_lb=mem_factor(method, a, rr, shape, bound="lb"),
            mem_factor_ub=mem_factor(method, a, rr, shape, bound="ub"),
            extra_params_factor=extra_params_factor(method, rr, shape),
            dense_macs=dense,
        ))
    return out


def cost_table_csv(reports: list[CostReport]) -> str:
    lines = ["method,active_ratio,rank,ops_factor,mem_factor_lb,mem_factor_ub,"
             "extra_params_factor,dense_macs"]
    for r in reports:
        lines.append(
            f"{r.method},{r.active_ratio:g},{r.rank},{r.ops_factor!r},"
            f"{r.mem_factor_lb!r},{r.mem_factor_ub!r},"
            f"{r.extra_params_factor!r},{r.dense_macs}")
    return "\n".join(lines) + "\n"


def format_cost_table(reports: list[CostReport], shape: BlockShape) -> str:
    d, m = shape.d, shape.m
    lines = [
        f"block d={d} m={m}  dense MACs = {dense_block_macs(shape):,}"
        f"  gate scoring overhead ≈ {gating_overhead_ratio(d):.3e} of a d×d GEMV",
        f"{'method':<9}{'ops':>12}{'mem lb':>12}{'mem ub':>12}{'extra params':>15}",
    ]
    for rep in reports:
        lines.append(
            f"{rep.method:<9}{rep.ops_factor:>12.5f}{rep.mem_factor_lb:>12.5f}"
            f"{rep.mem_factor_ub:>12.5f}{rep.extra_params_factor:>15.5f}")
    return "\n".join(lines)
