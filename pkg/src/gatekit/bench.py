"""Synthetic approximation-error benchmark with exhaustive oracles.

Measures the l2 deviation between dense and gated outputs of randomly
initialized networks, per gating method and sparsity level.  Also houses
the brute-force optimal-gate oracle (exhaustive over all C(n, k) masks)
and the Young's-inequality upper bound on multilayer deviation.

Trials are pure functions of their key (dimensions, seed, sparsity,
method): weights and inputs derive from the trial seed alone, so any
execution order or parallel schedule produces identical numbers.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import __version__
from .gating import (GateMask, apply_gate, gate_magnitude, gate_wina,
                     lowrank_factors, rsparse_apply, sparsity_to_k)
from .linalg import (as_matrix, as_vector, column_norms, gaussian_vector,
                     kaiming_init, l2_deviation, matvec, silu,
                     svd_right_factor)
from .ortho import (LinearChain, chain_forward, orthogonalize_chain,
                    verify_column_orthogonality)
from .rng import derive_seed

METHODS = ("teal", "wina", "rsparse")
INPUT_DISTS = ("standard_normal", "kaiming")
BRUTE_FORCE_CAP = 20

# Sub-stream tags for deriving weight/input seeds from a trial seed.
_TAG_WEIGHT = 0
_TAG_INPUT = 1


def _check_method(method: str) -> str:
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}, expected one of {METHODS}")
    return method


def _sample_input(n: int, seed: int, input_dist: str) -> np.ndarray:
    if input_dist not in INPUT_DISTS:
        raise ValueError(f"unknown input_dist {input_dist!r}")
    x = gaussian_vector(n, derive_seed(seed, _TAG_INPUT))
    if input_dist == "kaiming":
        x = x * np.sqrt(2.0 / n)
    return x


@lru_cache(maxsize=8)
def _single_layer_weight(n: int, m: int, seed: int, orthogonalize: bool) -> np.ndarray:
    w = kaiming_init(m, n, derive_seed(seed, _TAG_WEIGHT))
    if orthogonalize:
        w = w @ svd_right_factor(w)
    w.setflags(write=False)
    return w


@lru_cache(maxsize=8)
def _single_layer_factors(n: int, m: int, seed: int, orthogonalize: bool,
                          rank: int):
    w = _single_layer_weight(n, m, seed, orthogonalize)
    return lowrank_factors(w, rank)


@lru_cache(maxsize=8)
def _chain_weights(dims: tuple, seed: int, orthogonalize: bool,
                   activation: str) -> tuple:
    # Every layer is orthogonalized, not just l >= 2: with a near-square
    # Gaussian first layer the column norms are almost uniform, weight-
    # informed gating degenerates to magnitude gating there, and the
    # shared first-layer error washes out the method gap the benchmark
    # exists to measure.  Rotating layer 1 as well matches the synthetic
    # protocol that transforms every weight matrix.
    layers = [
        kaiming_init(dims[l], dims[l - 1], derive_seed(seed, _TAG_WEIGHT, l))
        for l in range(1, len(dims))
    ]
    if orthogonalize:
        if activation == "linear" and len(layers) > 1:
            layers = list(orthogonalize_chain(
                LinearChain(layers=tuple(layers)),
                rotate_input=True).chain.layers)
        else:
            # Nonlinear chains have no compensated transform; the synthetic
            # net is simply built with column-orthogonal layers.
            layers = [w @ svd_right_factor(w) for w in layers]
    for w in layers:
        w.setflags(write=False)
    return tuple(layers)


def _gate_for(method: str, u: np.ndarray, k: int, c: np.ndarray) -> GateMask:
    if method == "wina":
        return gate_wina(u, c, k)
    return gate_magnitude(u, k)


def run_single_layer_trial(
    n: int,
    m: int,
    sparsity: float,
    method: str,
    seed: int,
    orthogonalize: bool,
    rsparse_rank: int = 16,
    input_dist: str = "standard_normal",
) -> float:
    """Deviation ||W x - gated output||_2 for one random single-layer trial.

    W is an m x n Gaussian fan-in matrix (right-rotated onto its SVD V
    factor when ``orthogonalize``), x a random input, and K derives from
    the sparsity level.  The wina gate scores against the column norms of
    the possibly-transformed W; rsparse adds its low-rank residual branch.
    """
    if not 0.0 <= sparsity < 1.0:
        raise ValueError(f"sparsity must lie in [0, 1), got {sparsity}")
    _check_method(method)
    w = _single_layer_weight(n, m, seed, orthogonalize)
    x = _sample_input(n, seed, input_dist)
    k = sparsity_to_k(sparsity, n)
    dense = matvec(w, x)
    if method == "rsparse":
        factors = _single_layer_factors(n, m, seed, orthogonalize,
                                        min(rsparse_rank, min(m, n)))
        return l2_deviation(dense, rsparse_apply(w, x, k, factors))
    g = _gate_for(method, x, k, column_norms(w))
    return l2_deviation(dense, matvec(w, apply_gate(x, g)))


def _gated_chain_output(layers, activation: str, x: np.ndarray, sparsity: float,
                        method: str, rsparse_rank: int) -> np.ndarray:
    u = x
    for l, w in enumerate(layers):
        k = sparsity_to_k(sparsity, u.shape[0])
        if method == "rsparse":
            factors = lowrank_factors(w, min(rsparse_rank, min(w.shape)))
            u = rsparse_apply(w, u, k, factors)
        else:
            g = _gate_for(method, u, k, column_norms(w))
            u = w @ apply_gate(u, g)
        if activation == "silu" and l < len(layers) - 1:
            u = silu(u)
    return u


def run_multilayer_trial(cfg: "BenchConfig", sparsity: float, method: str,
                         seed: int) -> float:
    """Deviation of the sequentially gated chain from the dense chain.

    Layer l's gate is scored on the gated upstream output (post-activation
    when the chain interleaves silu), with wina using the consuming
    layer's column norms.
    """
    if not 0.0 <= sparsity < 1.0:
        raise ValueError(f"sparsity must lie in [0, 1), got {sparsity}")
    _check_method(method)
    layers = _chain_weights(tuple(cfg.dims), seed, cfg.orthogonalize,
                            cfg.activation)
    chain = LinearChain(layers=layers, activation=cfg.activation)
    x = _sample_input(cfg.dims[0], seed, cfg.input_dist)
    dense = chain_forward(chain, x)
    gated = _gated_chain_output(layers, cfg.activation, x, sparsity, method,
                                cfg.rsparse_rank)
    return l2_deviation(dense, gated)


def gates_for_plan(chain: LinearChain, plan, x, method: str = "wina") -> list[GateMask]:
    """Per-layer gate sequence for an allocation plan's sparsity levels.

    Layer l's gate is scored on the gated upstream output, exactly as in
    the sequential trials, so the returned gates feed ``deviation_E``
    directly.  ``plan`` needs one sparsity per chain layer.
    """
    _check_method(method)
    if method == "rsparse":
        raise ValueError("plan gating is defined for mask methods "
                         "(teal, wina); rsparse has no pure-mask form")
    sparsities = list(plan.per_layer_sparsity)
    if len(sparsities) != chain.depth:
        raise ValueError(
            f"plan has {len(sparsities)} layers, chain has {chain.depth}")
    u = as_vector(x)
    gates = []
    for w, s in zip(chain.layers, sparsities):
        k = sparsity_to_k(s, u.shape[0])
        g = _gate_for(method, u, k, column_norms(w))
        gates.append(g)
        u = w @ apply_gate(u, g)
        if chain.activation == "silu" and len(gates) < chain.depth:
            u = silu(u)
    return gates


def brute_force_optimal_gate(w, x, k: int) -> tuple[GateMask, float]:
    """Exhaustive minimum of ||W x - W (g * x)||_2 over all C(n, k) masks.

    Ties resolve to the lexicographically smallest keep-set.  n is capped
    at BRUTE_FORCE_CAP to keep the enumeration tractable.
    """
    w = as_matrix(w)
    x = as_vector(x)
    n = x.shape[0]
    if w.shape[1] != n:
        raise ValueError(f"dimension mismatch: {w.shape} @ {x.shape}")
    if n > BRUTE_FORCE_CAP:
        raise ValueError(
            f"brute force capped at n <= {BRUTE_FORCE_CAP}, got n = {n}")
    if not 0 <= k <= n:
        raise ValueError(f"k must lie in [0, {n}], got {k}")
    scaled = w * x  # column j is x_j * W[:, j]; error = sum over dropped columns
    best_keep = None
    best_err = np.inf
    for keep in itertools.combinations(range(n), k):
        dropped = [j for j in range(n) if j not in keep]
        err = float(np.linalg.norm(scaled[:, dropped].sum(axis=1)))
        if err < best_err:
            best_err = err
            best_keep = keep
    return GateMask.from_indices(n, best_keep), best_err


def deviation_E(chain: LinearChain, gates, x) -> float:
    """Squared l2 deviation of the gated forward pass from the dense one."""
    gates = list(gates)
    if len(gates) != chain.depth:
        raise ValueError(f"expected {chain.depth} gates, got {len(gates)}")
    for l, (g, width) in enumerate(zip(gates, chain.layer_input_dims())):
        if g.n != width:
            raise ValueError(f"gate {l + 1} has length {g.n}, expected {width}")
    dense = chain_forward(chain, x)
    gated = chain_forward(chain, x, gates=gates)
    return l2_deviation(dense, gated) ** 2


def upper_bound_U(chain: LinearChain, gates, x, alpha: float) -> float:
    """Young's-inequality upper bound on deviation_E for linear chains.

    With u = W(L) (y_g(L-1) - y(L-1)) and v = W(L) (M(L) - I) y_g(L-1),
    the deviation satisfies E = ||u + v||^2 <= (1+alpha)||u||^2 +
    (1+1/alpha)||v||^2.  ||v||^2 is evaluated in its separable form
    sum_{j dropped} ||W(L)_{:,j}||^2 y_g(L-1)_j^2, which requires the
    top layer to be column-orthogonal; a single layer has u = 0.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if chain.activation != "linear":
        raise ValueError("upper_bound_U is defined for linear chains")
    gates = list(gates)
    if len(gates) != chain.depth:
        raise ValueError(f"expected {chain.depth} gates, got {len(gates)}")
    x = as_vector(x)

    if chain.depth == 1:
        v = chain.layers[0] @ (apply_gate(x, gates[0]) - x)
        return (1.0 + 1.0 / alpha) * float(v @ v)

    for l, w in enumerate(chain.layers[1:], start=2):
        gram_tol = 1e-8 * (1.0 + float(np.max(column_norms(w)) ** 2))
        offdiag = verify_column_orthogonality(w)
        if offdiag > gram_tol:
            raise ValueError(
                f"layer {l} is not column-orthogonal (off-diagonal "
                f"{offdiag:.3e}); orthogonalize the chain first")

    y = x
    y_g = x
    for l, w in enumerate(chain.layers[:-1]):
        y = w @ y
        y_g = w @ apply_gate(y_g, gates[l])

    w_top = chain.layers[-1]
    g_top = gates[-1]
    u = w_top @ (y_g - y)
    dropped = g_top.keep == 0
    c_sq = column_norms(w_top) ** 2
    v_sq = float(np.sum(c_sq[dropped] * y_g[dropped] ** 2))
    return (1.0 + alpha) * float(u @ u) + (1.0 + 1.0 / alpha) * v_sq


@dataclass(frozen=True)
class BenchConfig:
    """Grid specification for the synthetic benchmark.

    ``dims`` are the layer sizes n0..nL (two entries = single layer).
    ``seeds`` is the trial count; trial i uses derive_seed(base_seed, i).
    """

    dims: tuple
    sparsity_levels: tuple = (0.25, 0.40, 0.50, 0.65)
    seeds: int = 20
    methods: tuple = ("teal", "wina")
    activation: str = "linear"
    rsparse_rank: int = 16
    orthogonalize: bool = True
    input_dist: str = "standard_normal"
    base_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "sparsity_levels",
                           tuple(float(s) for s in self.sparsity_levels))
        object.__setattr__(self, "methods", tuple(self.methods))
        if len(self.dims) < 2 or any(d < 1 for d in self.dims):
            raise ValueError("dims must list at least two positive sizes")
        if any(not 0.0 <= s < 1.0 for s in self.sparsity_levels):
            raise ValueError("sparsity levels must lie in [0, 1)")
        if self.seeds < 1:
            raise ValueError("seeds must be >= 1")
        for m in self.methods:
            _check_method(m)
        if self.activation not in ("linear", "silu"):
            raise ValueError("activation must be 'linear' or 'silu'")
        if self.input_dist not in INPUT_DISTS:
            raise ValueError(f"input_dist must be one of {INPUT_DISTS}")
        if self.rsparse_rank < 1:
            raise ValueError("rsparse_rank must be >= 1")

    def to_dict(self) -> dict:
        return {
            "dims": list(self.dims),
            "sparsity_levels": list(self.sparsity_levels),
            "seeds": self.seeds,
            "methods": list(self.methods),
            "activation": self.activation,
            "rsparse_rank": self.rsparse_rank,
            "orthogonalize": self.orthogonalize,
            "input_dist": self.input_dist,
            "base_seed": self.base_seed,
        }


@dataclass(frozen=True)
class BenchRow:
    method: str
    sparsity: float
    mean: float
    std: float
    n_trials: int


@dataclass(frozen=True)
class BenchReport:
    rows: tuple
    config: dict
    version: str
    wall_time_s: float

    def row(self, method: str, sparsity: float) -> BenchRow:
        for r in self.rows:
            if r.method == method and r.sparsity == sparsity:
                return r
        raise KeyError(f"no row for ({method}, {sparsity})")

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "config": self.config,
            "toolkit_version": self.version,
            "wall_time_s": self.wall_time_s,
            "rows": [
                {"method": r.method, "sparsity": r.sparsity, "mean": r.mean,
                 "std": r.std, "n_trials": r.n_trials}
                for r in self.rows
            ],
        }

    def to_csv(self) -> str:
        lines = ["method,sparsity,mean,std,n_trials"]
        for r in self.rows:
            lines.append(
                f"{r.method},{r.sparsity:g},{r.mean!r},{r.std!r},{r.n_trials}")
        return "\n".join(lines) + "\n"

    def format_grid(self) -> str:
        """Human-readable method x sparsity grid of mean +/- std."""
        levels = sorted({r.sparsity for r in self.rows})
        methods = []
        for r in self.rows:
            if r.method not in methods:
                methods.append(r.method)
        header = ["method".ljust(9)] + [f"{s * 100:.0f}%".rjust(17) for s in levels]
        lines = ["  ".join(header)]
        for m in methods:
            cells = [m.ljust(9)]
            for s in levels:
                r = self.row(m, s)
                cells.append(f"{r.mean:9.4f} ± {r.std:.4f}".rjust(17))
            lines.append("  ".join(cells))
        return "\n".join(lines)


def aggregate_and_report(cfg: BenchConfig) -> BenchReport:
    """Run the full (method x sparsity x seed) grid and summarize it.

    Deterministic for a fixed config: trial i uses seed
    derive_seed(base_seed, i) regardless of grid position.
    """
    start = time.perf_counter()
    single = len(cfg.dims) == 2
    # Seed-outer iteration so the cached per-seed weights (one SVD each
    # when orthogonalizing) serve every (method, sparsity) cell; results
    # are pure functions of the trial key, so ordering cannot change them.
    devs = {(m, s): np.empty(cfg.seeds)
            for m in cfg.methods for s in cfg.sparsity_levels}
    for i in range(cfg.seeds):
        trial_seed = derive_seed(cfg.base_seed, i)
        for method in cfg.methods:
            for sparsity in cfg.sparsity_levels:
                if single:
                    value = run_single_layer_trial(
                        cfg.dims[0], cfg.dims[1], sparsity, method, trial_seed,
                        cfg.orthogonalize, rsparse_rank=cfg.rsparse_rank,
                        input_dist=cfg.input_dist)
                else:
                    value = run_multilayer_trial(cfg, sparsity, method,
                                                 trial_seed)
                devs[(method, sparsity)][i] = value
    rows = []
    for method in cfg.methods:
        for sparsity in cfg.sparsity_levels:
            values = devs[(method, sparsity)]
            std = float(values.std(ddof=1)) if cfg.seeds > 1 else 0.0
            rows.append(BenchRow(method=method, sparsity=sparsity,
                                 mean=float(values.mean()), std=std,
                                 n_trials=cfg.seeds))
    return BenchReport(rows=tuple(rows), config=cfg.to_dict(),
                       version=__version__,
                       wall_time_s=time.perf_counter() - start)
