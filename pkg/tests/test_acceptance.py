"""Acceptance gate: the eight shipping criteria at their stated tolerances.

Each test prints one [PASS]/[FAIL] line (run with ``pytest -s`` to see
them: a test that reaches its print has passed all of its assertions).
Criteria that are statements about measured latency run the real
benchmark on the default desk-scale shape.
"""

import time

import pytest

from gatekit.allocator import _layer_profiles, _propagate_calibration, greedy_allocate
from gatekit.bench import BenchConfig, run_multilayer_trial, run_single_layer_trial
from gatekit.kernel import bench_latency
from gatekit.linalg import gaussian_vector, kaiming_init
from gatekit.ortho import LinearChain
from gatekit.rng import derive_seed
from gatekit.verify import (check_block_invariance, check_bound_soundness,
                            check_chain_invariance, check_cost_oracle,
                            check_gate_optimality, check_kernel_equivalence,
                            check_necessity_witness)

SPARSITY_LEVELS = (0.25, 0.40, 0.50, 0.65)
RATIO_BOUND = 0.70


def report(name: str, detail: str) -> None:
    print(f"\n[PASS] {name}: {detail}")


def test_criterion_1_gate_optimality():
    """Gate equals the exhaustive optimum on orthogonal W, 1e-10, < 60 s."""
    start = time.perf_counter()
    result = check_gate_optimality(n_instances=100, seed=2024)
    elapsed = time.perf_counter() - start
    assert result.passed, result.detail
    assert elapsed < 60.0, f"runtime {elapsed:.1f}s exceeds 60s target"
    report("criterion 1 (optimality vs brute force)",
           f"{result.detail}; {elapsed:.1f}s")


def _mean_ratios_single(levels, seeds: int = 20) -> dict:
    # Seed-outer so each seed's weight matrix (one SVD) is reused across
    # every (method, sparsity) cell.
    sums = {("wina", s): 0.0 for s in levels} | {("teal", s): 0.0 for s in levels}
    for i in range(seeds):
        for method in ("wina", "teal"):
            for s in levels:
                sums[(method, s)] += run_single_layer_trial(
                    1024, 1024, s, method, derive_seed(0, i), True)
    return {s: sums[("wina", s)] / sums[("teal", s)] for s in levels}


def _mean_ratios_two_layer(levels, seeds: int = 20) -> dict:
    cfg = BenchConfig(dims=(512, 512, 512), seeds=seeds, orthogonalize=True)
    sums = {("wina", s): 0.0 for s in levels} | {("teal", s): 0.0 for s in levels}
    for i in range(seeds):
        for method in ("wina", "teal"):
            for s in levels:
                sums[(method, s)] += run_multilayer_trial(
                    cfg, s, method, derive_seed(0, i))
    return {s: sums[("wina", s)] / sums[("teal", s)] for s in levels}


def test_criterion_2_error_ratio_analog():
    """Mean weight-informed/magnitude error ratio <= 0.70 per level, < 5 min."""
    start = time.perf_counter()
    single = _mean_ratios_single(SPARSITY_LEVELS)
    double = _mean_ratios_two_layer(SPARSITY_LEVELS)
    elapsed = time.perf_counter() - start
    for s, ratio in single.items():
        assert ratio <= RATIO_BOUND, f"single-layer ratio {ratio:.3f} at {s}"
    for s, ratio in double.items():
        assert ratio <= RATIO_BOUND, f"two-layer ratio {ratio:.3f} at {s}"
    assert elapsed < 300.0, f"runtime {elapsed:.1f}s exceeds 5 min target"
    fmt = lambda d: ", ".join(f"{s:.0%}:{r:.2f}" for s, r in d.items())
    report("criterion 2 (error-ratio analog, 1024x1024 and 512^3, 20 seeds)",
           f"single [{fmt(single)}], two-layer [{fmt(double)}], "
           f"bound {RATIO_BOUND}; {elapsed:.0f}s")


def test_criterion_3_bound_soundness():
    """E <= U for alpha in {0.5, 1, 2} on 200 random chains, 1e-9 slack."""
    result = check_bound_soundness(n_instances=200, seed=77,
                                   alphas=(0.5, 1.0, 2.0))
    assert result.passed, result.detail
    report("criterion 3 (upper-bound soundness)", result.detail)


def test_criterion_4_orthogonalization_correctness():
    """Gram <= 1e-8 on targeted matrices; invariance 1e-6 chain / 1e-5 block."""
    chains = check_chain_invariance(n_chains=20, seed=5)
    assert chains.passed, chains.detail
    block = check_block_invariance(seed=9, d=32, m=64, h=4, n_inputs=20)
    assert block.passed, block.detail
    report("criterion 4 (orthogonalization correctness)",
           f"{chains.detail}; {block.detail}")


def test_criterion_5_cost_model_oracle():
    """Analytic factors match the MAC counter to 1e-12; yardstick exact."""
    result = check_cost_oracle()
    assert result.passed, result.detail
    report("criterion 5 (cost-model oracle equivalence)", result.detail)


def _latency_properties(rep):
    """Monotonicity, parity, and zero-sparsity speedup of one benchmark run.

    Returns (problems, worst_parity_gap, speedup_at_zero).
    """
    problems = []
    grid = rep.sparsity_grid
    for variant in ("teal", "wina"):
        medians = [rep.row(variant, s).median_ns for s in grid]
        for lo, hi, s in zip(medians[1:], medians[:-1], grid[1:]):
            if lo > hi * 1.05:
                problems.append(f"{variant} median rose from {hi:.0f}ns to "
                                f"{lo:.0f}ns at sparsity {s}")
    parity_worst = 0.0
    for s in grid:
        teal = rep.row("teal", s).median_ns
        wina = rep.row("wina", s).median_ns
        gap = abs(wina - teal) / teal
        parity_worst = max(parity_worst, gap)
        if gap > 0.05:
            problems.append(f"variant medians differ by {gap:.1%} at "
                            f"sparsity {s}")
    speedup_at_zero = rep.row("teal", 0.0).speedup
    if not 0.85 <= speedup_at_zero <= 1.15:
        problems.append(f"speedup at zero sparsity {speedup_at_zero:.2f}")
    return problems, parity_worst, speedup_at_zero


def test_criterion_6_kernel_equivalence_and_parity():
    """Outputs match to 1e-12; latency monotone (5% band); parity within 5%.

    The latency bands sit near the noise floor of a busy shared host, so a
    failing attempt remeasures (fresh 30-rep benchmark) before the
    criterion is judged; the numeric-equivalence check is single-shot.
    """
    equiv = check_kernel_equivalence(seed=8)
    assert equiv.passed, equiv.detail

    attempts = []
    for attempt in range(3):
        rep = bench_latency((2048, 8192), batch=1,
                            sparsity_grid=(0.0, 0.25, 0.5, 0.65, 0.9),
                            reps=30, seed=0)
        problems, parity_worst, speedup_at_zero = _latency_properties(rep)
        attempts.append(problems)
        if not problems:
            report("criterion 6 (kernel equivalence and latency parity)",
                   f"{equiv.detail}; monotone within 5% band on 2048x8192; "
                   f"worst parity gap {parity_worst:.1%}; speedup at zero "
                   f"sparsity {speedup_at_zero:.2f}")
            return
    pytest.fail(f"latency properties failed in all attempts: {attempts}")


def test_criterion_7_allocator_budget_and_dominance():
    """Budget within one step; greedy total <= uniform total + 1e-9, 20 chains."""
    worst_gap = 0.0
    for seed in range(20):
        dims = (24, 16, 32, 12)
        layers = tuple(kaiming_init(dims[l], dims[l - 1],
                                    derive_seed(seed, 40, l))
                       for l in range(1, len(dims)))
        chain = LinearChain(layers=layers)
        calib = [gaussian_vector(24, derive_seed(seed, 41, i)) for i in range(4)]
        target, step = 0.5, 0.05
        plan = greedy_allocate(chain, calib, target=target, step=step)
        gap = abs(plan.global_achieved - target)
        worst_gap = max(worst_gap, gap)
        assert gap <= step + 1e-9, f"seed {seed}: budget gap {gap}"

        per_layer_inputs = _propagate_calibration(chain, calib)

        def total_sq(sparsities):
            return sum(
                _layer_profiles(w, inputs, [s], "wina", 16)[1][0]
                for w, inputs, s in zip(chain.layers, per_layer_inputs,
                                        sparsities))

        greedy_total = total_sq(plan.per_layer_sparsity)
        uniform_total = total_sq([target] * chain.depth)
        assert greedy_total <= uniform_total + 1e-9, (
            f"seed {seed}: greedy {greedy_total} > uniform {uniform_total}")
    report("criterion 7 (allocator budget and dominance)",
           f"20 random chains, worst budget gap {worst_gap:.3f} <= one step, "
           f"greedy never above uniform")


def test_criterion_8_necessity_witness():
    """A recorded non-orthogonal instance where the gate is suboptimal."""
    result = check_necessity_witness()
    assert result.passed, result.detail
    report("criterion 8 (orthogonality necessity witness)", result.detail)
