"""Oracle suite: every theoretical claim the toolkit relies on, checked.

Each check returns a CheckResult with pass/fail and enough detail
(seeds, parameters) to reproduce a failure.  The CLI ``verify``
subcommand and the acceptance tests both run these.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bench import brute_force_optimal_gate, deviation_E, upper_bound_U
from .block import model_forward, random_block
from .gating import GateMask, apply_gate, gate_magnitude, gate_wina, topk_mask
from .kernel import MacCounter, as_col_major, sparse_gemv
from .linalg import (column_norms, gaussian_vector, kaiming_init, matvec,
                     svd_right_factor)
from .ortho import (LinearChain, chain_forward, orthogonalize_block,
                    orthogonalize_chain, verify_column_orthogonality,
                    verify_invariance)
from .costmodel import (BlockShape, count_block_macs, dense_block_macs,
                        ops_factor)
from .rng import derive_seed

OPTIMALITY_TOL = 1e-10
BOUND_SLACK = 1e-9
CROSS_TERM_RTOL = 1e-8
CHAIN_GRAM_TOL = 1e-8
CHAIN_INVARIANCE_TOL = 1e-6
BLOCK_INVARIANCE_TOL = 1e-5
KERNEL_TOL = 1e-12


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.detail}"


def _random_orthogonal_instance(seed: int, max_dim: int = 12):
    """Column-orthogonalized random W plus a random input."""
    bits = gaussian_vector(2, derive_seed(seed, 0))
    n = 2 + int(abs(bits[0]) * 1e6) % (max_dim - 1)
    m = 2 + int(abs(bits[1]) * 1e6) % (max_dim - 1)
    w = kaiming_init(m, n, derive_seed(seed, 1))
    w = w @ svd_right_factor(w)
    x = gaussian_vector(n, derive_seed(seed, 2))
    return w, x


def check_gate_optimality(n_instances: int = 100, seed: int = 2024) -> CheckResult:
    """Weight-informed gate equals the exhaustive optimum on orthogonal W.

    Over random column-orthogonalized matrices (n, m <= 12) and every
    feasible k, the wina deviation must match the brute-force C(n, k)
    minimum to within 1e-10.
    """
    checked = 0
    for i in range(n_instances):
        inst_seed = derive_seed(seed, i)
        w, x = _random_orthogonal_instance(inst_seed)
        c = column_norms(w)
        n = x.shape[0]
        for k in range(n + 1):
            g = gate_wina(x, c, k)
            dev = float(np.linalg.norm(w @ x - w @ apply_gate(x, g)))
            _, best = brute_force_optimal_gate(w, x, k)
            if dev > best + OPTIMALITY_TOL:
                return CheckResult(
                    "gate-optimality", False,
                    f"instance seed={inst_seed} n={n} k={k}: wina deviation "
                    f"{dev!r} exceeds brute-force minimum {best!r}")
            checked += 1
    return CheckResult(
        "gate-optimality", True,
        f"{n_instances} orthogonalized instances, {checked} (instance, k) "
        f"pairs within {OPTIMALITY_TOL:g}")


def necessity_witness() -> tuple[np.ndarray, np.ndarray, int]:
    """A non-orthogonal instance where the weight-informed gate is suboptimal.

    Columns 0 and 1 are parallel with opposite input signs, so dropping
    both cancels exactly; scoring keeps column 0 instead and pays for it.
    """
    w = np.array([[1.0, 1.0, 0.0],
                  [0.0, 0.0, 1.0]])
    x = np.array([1.0, -1.0, 0.9])
    return w, x, 1


def check_necessity_witness() -> CheckResult:
    """Column-orthogonality is load-bearing: without it the gate can lose."""
    w, x, k = necessity_witness()
    offdiag = verify_column_orthogonality(w)
    g = gate_wina(x, column_norms(w), k)
    dev = float(np.linalg.norm(w @ x - w @ apply_gate(x, g)))
    mask, best = brute_force_optimal_gate(w, x, k)
    ok = offdiag > 0.5 and dev > best + 0.1
    return CheckResult(
        "necessity-witness", ok,
        f"non-orthogonal 2x3 (offdiag {offdiag:g}): wina deviation {dev:.4f} "
        f"vs optimum {best:.4f} (keep {mask.to_bits()})")


def _random_chain(seed: int, max_depth: int = 4, max_dim: int = 10) -> LinearChain:
    bits = gaussian_vector(max_depth + 2, derive_seed(seed, 10))
    depth = 1 + int(abs(bits[0]) * 1e6) % max_depth
    dims = [2 + int(abs(b) * 1e6) % (max_dim - 1) for b in bits[1:depth + 2]]
    layers = [kaiming_init(dims[l], dims[l - 1], derive_seed(seed, 11, l))
              for l in range(1, len(dims))]
    return LinearChain(layers=tuple(layers))


def _random_gates(chain: LinearChain, seed: int) -> list[GateMask]:
    gates = []
    for l, width in enumerate(chain.layer_input_dims()):
        scores = np.abs(gaussian_vector(width, derive_seed(seed, 20, l)))
        k = int(abs(gaussian_vector(1, derive_seed(seed, 21, l))[0]) * 1e6) % (width + 1)
        gates.append(topk_mask(scores, k))
    return gates


def check_bound_soundness(n_instances: int = 200, seed: int = 77,
                          alphas=(0.5, 1.0, 2.0)) -> CheckResult:
    """deviation_E never exceeds upper_bound_U beyond 1e-9 slack."""
    for i in range(n_instances):
        inst_seed = derive_seed(seed, i)
        chain = orthogonalize_chain(_random_chain(inst_seed)).chain
        gates = _random_gates(chain, inst_seed)
        x = gaussian_vector(chain.input_dim, derive_seed(inst_seed, 30))
        dev = deviation_E(chain, gates, x)
        for alpha in alphas:
            bound = upper_bound_U(chain, gates, x, alpha)
            if dev > bound + BOUND_SLACK:
                return CheckResult(
                    "bound-soundness", False,
                    f"instance seed={inst_seed} depth={chain.depth} "
                    f"alpha={alpha}: E={dev!r} > U={bound!r}")
    return CheckResult(
        "bound-soundness", True,
        f"{n_instances} chains x alphas {alphas}, zero violations beyond "
        f"{BOUND_SLACK:g}")


def check_cross_term_identity(n_instances: int = 100, seed: int = 31) -> CheckResult:
    """On orthogonal W the squared deviation is the dropped-coordinate sum."""
    for i in range(n_instances):
        inst_seed = derive_seed(seed, i)
        w, x = _random_orthogonal_instance(inst_seed)
        c_sq = column_norms(w) ** 2
        n = x.shape[0]
        k = int(abs(gaussian_vector(1, derive_seed(inst_seed, 3))[0]) * 1e6) % (n + 1)
        g = gate_wina(x, np.sqrt(c_sq), k)
        dev_sq = float(np.linalg.norm(w @ x - w @ apply_gate(x, g)) ** 2)
        dropped = g.keep == 0
        separable = float(np.sum(x[dropped] ** 2 * c_sq[dropped]))
        if abs(dev_sq - separable) > CROSS_TERM_RTOL * (1.0 + abs(separable)):
            return CheckResult(
                "cross-term-identity", False,
                f"instance seed={inst_seed} n={n} k={k}: deviation^2 "
                f"{dev_sq!r} vs separable sum {separable!r}")
    return CheckResult(
        "cross-term-identity", True,
        f"{n_instances} orthogonalized instances within relative "
        f"{CROSS_TERM_RTOL:g}")


def check_chain_invariance(n_chains: int = 20, seed: int = 5) -> CheckResult:
    """Transformed 3-layer chains: diagonal Grams and unchanged outputs."""
    for i in range(n_chains):
        inst_seed = derive_seed(seed, i)
        dims = (8, 8, 8, 8)
        layers = tuple(
            kaiming_init(dims[l], dims[l - 1], derive_seed(inst_seed, l))
            for l in range(1, len(dims)))
        chain = LinearChain(layers=layers)
        result = orthogonalize_chain(chain)
        for l, w in enumerate(result.chain.layers[1:], start=2):
            gram_tol = CHAIN_GRAM_TOL * (1.0 + float(np.max(column_norms(w)) ** 2))
            off = verify_column_orthogonality(w)
            if off > gram_tol:
                return CheckResult(
                    "chain-invariance", False,
                    f"chain seed={inst_seed} layer {l}: Gram off-diagonal {off!r}")
        dev = verify_invariance(
            lambda x: chain_forward(chain, x),
            lambda x: chain_forward(result.chain, x),
            lambda s: gaussian_vector(chain.input_dim, s),
            n_inputs=50, seed=derive_seed(inst_seed, 99))
        if dev > CHAIN_INVARIANCE_TOL:
            return CheckResult(
                "chain-invariance", False,
                f"chain seed={inst_seed}: output deviation {dev!r}")
    return CheckResult(
        "chain-invariance", True,
        f"{n_chains} random 3-layer chains: Grams <= {CHAIN_GRAM_TOL:g}, "
        f"outputs within {CHAIN_INVARIANCE_TOL:g}")


def check_block_invariance(seed: int = 9, d: int = 32, m: int = 64, h: int = 4,
                           vocab: int = 50, t: int = 5,
                           n_inputs: int = 20) -> CheckResult:
    """Transformed toy block: targeted Gram diagonal, logits unchanged."""
    block = random_block(d, m, h, vocab, seed)
    transformed = orthogonalize_block(block)
    gram_tol = CHAIN_GRAM_TOL * (
        1.0 + float(np.max(column_norms(transformed.w_k)) ** 2))
    off = verify_column_orthogonality(transformed.w_k)
    if off > gram_tol:
        return CheckResult(
            "block-invariance", False,
            f"block seed={seed}: key-matrix Gram off-diagonal {off!r}")

    def sample_tokens(s: int):
        draws = gaussian_vector(t, s)
        return np.abs(draws * 1e6).astype(np.int64) % vocab

    dev = verify_invariance(
        lambda tok: model_forward(block, tok),
        lambda tok: model_forward(transformed, tok),
        sample_tokens, n_inputs=n_inputs, seed=derive_seed(seed, 1))
    if dev > BLOCK_INVARIANCE_TOL:
        return CheckResult(
            "block-invariance", False,
            f"block seed={seed}: logits deviation {dev!r}")
    return CheckResult(
        "block-invariance", True,
        f"d={d} m={m} h={h}: key Gram off-diagonal {off:.2e}, logits "
        f"deviation {dev:.2e} over {n_inputs} token sequences")


def check_cost_oracle() -> CheckResult:
    """Closed-form ops factors match the per-column MAC counter exactly."""
    shape_big = BlockShape(d=4096, m=11008)
    if dense_block_macs(shape_big) != 202_375_168:
        return CheckResult(
            "cost-oracle", False,
            f"dense MACs for d=4096 m=11008: {dense_block_macs(shape_big)}")
    grids = 0
    for d, m in ((8, 16), (16, 8), (64, 64)):
        shape = BlockShape(d=d, m=m)
        dense = dense_block_macs(shape)
        for method in ("dense", "teal", "wina", "rsparse"):
            for a in (0.0, 0.25, 0.5, 1.0):
                for r in (0, 4, 16):
                    rr = r if method == "rsparse" else 0
                    counted = count_block_macs(shape, method, a, rr) / dense
                    analytic = ops_factor(method, a, rr, shape)
                    if abs(counted - analytic) > 1e-12:
                        return CheckResult(
                            "cost-oracle", False,
                            f"d={d} m={m} {method} a={a} r={rr}: counted "
                            f"{counted!r} vs analytic {analytic!r}")
                    grids += 1
    return CheckResult(
        "cost-oracle", True,
        f"{grids} grid points within 1e-12; dense MACs formula exact")


def check_kernel_equivalence(seed: int = 8) -> CheckResult:
    """Gather kernel output equals the dense-then-mask reference."""
    for rows_n, cols_n, k in ((64, 64, 16), (128, 128, 64), (512, 1024, 256)):
        w = as_col_major(kaiming_init(rows_n, cols_n, derive_seed(seed, rows_n)))
        x = gaussian_vector(cols_n, derive_seed(seed, cols_n, 1))
        g = gate_magnitude(x, k)
        counter = MacCounter()
        got = sparse_gemv(w, x, g, counter=counter)
        ref = matvec(w, apply_gate(x, g))
        err = float(np.abs(got - ref).max())
        if err > KERNEL_TOL:
            return CheckResult(
                "kernel-equivalence", False,
                f"shape {rows_n}x{cols_n} k={k} seed={seed}: max "
                f"deviation {err!r}")
        if counter.macs != k * rows_n:
            return CheckResult(
                "kernel-equivalence", False,
                f"shape {rows_n}x{cols_n} k={k}: counted {counter.macs} MACs, "
                f"expected {k * rows_n}")
    return CheckResult(
        "kernel-equivalence", True,
        f"all tested shapes within {KERNEL_TOL:g}; MAC counts exactly k*rows")


def run_all(quick: bool = False, seed: int = 2024) -> list[CheckResult]:
    optimality_n = 20 if quick else 100
    bound_n = 30 if quick else 200
    cross_n = 20 if quick else 100
    chains_n = 5 if quick else 20
    return [
        check_gate_optimality(optimality_n, seed=derive_seed(seed, 1)),
        check_necessity_witness(),
        check_bound_soundness(bound_n, seed=derive_seed(seed, 2)),
        check_cross_term_identity(cross_n, seed=derive_seed(seed, 3)),
        check_chain_invariance(chains_n, seed=derive_seed(seed, 4)),
        check_block_invariance(seed=derive_seed(seed, 5)),
        check_cost_oracle(),
        check_kernel_equivalence(seed=derive_seed(seed, 6)),
    ]
