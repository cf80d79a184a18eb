"""Command-line interface.

Subcommands: synth-bench, ortho, allocate, cost, gemv-bench, verify.
Exit codes: 0 success, 1 verification failure, 2 usage or input error.
All randomness is seed-derived and the seed is printed in output
headers; the GATEKIT_SEED environment variable sets the default seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .allocator import AllocationPlan, greedy_allocate
from .bench import BenchConfig, METHODS, aggregate_and_report
from .block import ToyDecoderBlock, model_forward
from .costmodel import (BlockShape, cost_table, cost_table_csv, flops_savings,
                        format_cost_table)
from .kernel import bench_latency
from .linalg import gaussian_vector
from .netio import NetFormatError, load_net, save_net
from .ortho import (LinearChain, chain_forward, orthogonalize_block,
                    orthogonalize_chain, verify_column_orthogonality,
                    verify_invariance)
from .rng import derive_seed
from .verify import run_all

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_USAGE = 2


class UsageError(ValueError):
    pass


def _default_seed() -> int:
    raw = os.environ.get("GATEKIT_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"GATEKIT_SEED must be an integer, got {raw!r}")


def _csv_floats(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}")


def _csv_ints(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}")


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2) + "\n")


def cmd_synth_bench(args) -> int:
    dims = _csv_ints(args.dims)
    methods = [m for m in args.methods.split(",") if m]
    for m in methods:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}, expected subset of {METHODS}")
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    try:
        cfg = BenchConfig(
            dims=tuple(dims),
            sparsity_levels=tuple(_csv_floats(args.sparsity)),
            seeds=args.seeds,
            methods=tuple(methods),
            activation=args.activation,
            rsparse_rank=args.rsparse_rank,
            orthogonalize=args.orthogonalize,
            input_dist=args.input_dist,
            base_seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc))
    print(f"# synth-bench dims={dims} seeds={cfg.seeds} base_seed={cfg.base_seed} "
          f"orthogonalize={cfg.orthogonalize} activation={cfg.activation}")
    report = aggregate_and_report(cfg)
    print(report.format_grid())
    out = Path(args.out) if args.out else Path("bench_report.json")
    _write_json(out, report.to_dict())
    out.with_suffix(".csv").write_text(report.to_csv())
    print(f"# wrote {out} and {out.with_suffix('.csv')}")
    return EXIT_OK


def _ortho_report_chain(original: LinearChain, result, args, wall: float) -> dict:
    dev = verify_invariance(
        lambda x: chain_forward(original, x),
        lambda x: chain_forward(result.chain, x),
        lambda s: gaussian_vector(original.input_dim, s),
        n_inputs=20, seed=derive_seed(args.seed, 99))
    return {
        "format_version": 1,
        "kind": "chain",
        "gram_offdiag_before": [verify_column_orthogonality(w)
                                for w in original.layers],
        "gram_offdiag_after": [float(v) for v in result.per_layer_gram_offdiag],
        "invariance_deviation": dev,
        "wall_time_s": wall,
    }


def _ortho_report_block(original: ToyDecoderBlock, transformed: ToyDecoderBlock,
                        args, wall: float) -> dict:
    def sample_tokens(s: int):
        draws = gaussian_vector(5, s)
        return np.abs(draws * 1e6).astype(np.int64) % original.vocab

    dev = verify_invariance(
        lambda tok: model_forward(original, tok),
        lambda tok: model_forward(transformed, tok),
        sample_tokens, n_inputs=20, seed=derive_seed(args.seed, 99))
    names = sorted(original.matrices())
    return {
        "format_version": 1,
        "kind": "block",
        "gram_offdiag_before": {n: verify_column_orthogonality(original.matrices()[n])
                                for n in names},
        "gram_offdiag_after": {n: verify_column_orthogonality(transformed.matrices()[n])
                               for n in names},
        "targeted": "k",
        "invariance_deviation": dev,
        "wall_time_s": wall,
    }


def cmd_ortho(args) -> int:
    net = load_net(args.infile)
    start = time.perf_counter()
    if isinstance(net, LinearChain):
        result = orthogonalize_chain(net, rotate_input=args.rotate_input)
        transformed = result.chain
        report = _ortho_report_chain(net, result, args, time.perf_counter() - start)
    else:
        transformed = orthogonalize_block(net)
        report = _ortho_report_block(net, transformed, args,
                                     time.perf_counter() - start)
    out = Path(args.out) if args.out else Path(args.infile).with_suffix(".ortho.json")
    save_net(transformed, out)
    report_path = Path(args.report) if args.report else out.with_suffix(".report.json")
    _write_json(report_path, report)
    print(f"# ortho seed={args.seed} invariance_deviation="
          f"{report['invariance_deviation']:.3e}")
    print(f"# wrote {out} and {report_path}")
    return EXIT_OK


def cmd_allocate(args) -> int:
    net = load_net(args.infile)
    if not isinstance(net, LinearChain):
        raise UsageError("allocate expects a chain net file")
    if args.calib < 1:
        raise UsageError("--calib must be >= 1")
    calib = [gaussian_vector(net.input_dim, derive_seed(args.seed, 7, i))
             for i in range(args.calib)]
    try:
        plan = greedy_allocate(net, calib, target=args.target, step=args.step,
                               method=args.method,
                               max_sparsity=args.max_sparsity)
    except ValueError as exc:
        raise UsageError(str(exc))
    print(f"# allocate seed={args.seed} method={args.method} "
          f"target={args.target} step={args.step}")
    for l, s in enumerate(plan.per_layer_sparsity, start=1):
        print(f"layer {l}: sparsity {s:.2f}")
    print(f"parameter-weighted global sparsity: {plan.global_achieved:.4f}")
    out = Path(args.out) if args.out else Path("allocation_plan.json")
    _write_json(out, plan.to_dict())
    print(f"# wrote {out}")
    return EXIT_OK


def cmd_cost(args) -> int:
    if not 0.0 <= args.a <= 1.0:
        raise UsageError("--a must lie in [0, 1]")
    if args.r < 0:
        raise UsageError("--r must be >= 0")
    try:
        shape = BlockShape(d=args.d, m=args.m)
    except ValueError as exc:
        raise UsageError(str(exc))
    reports = cost_table(shape, args.a, args.r)
    print(format_cost_table(reports, shape))
    if args.plan:
        plan = AllocationPlan.from_dict(json.loads(Path(args.plan).read_text()))
        print(f"GEMV FLOP savings for plan: {flops_savings(shape, plan):.4f}")
    if args.out:
        out = Path(args.out)
        _write_json(out, {
            "format_version": 1,
            "d": args.d, "m": args.m,
            "reports": [r.to_dict() for r in reports],
        })
        out.with_suffix(".csv").write_text(cost_table_csv(reports))
        print(f"# wrote {out} and {out.with_suffix('.csv')}")
    return EXIT_OK


def cmd_gemv_bench(args) -> int:
    shape = (5120, 17920) if args.large_shape else (args.rows, args.cols)
    if args.reps < 30:
        raise UsageError("--reps must be >= 30")
    grid = _csv_floats(args.sparsity)
    print(f"# gemv-bench shape={shape[0]}x{shape[1]} batch={args.batch} "
          f"reps={args.reps} seed={args.seed}")
    report = bench_latency(shape, batch=args.batch, sparsity_grid=grid,
                           reps=args.reps, seed=args.seed)
    print(report.format_table())
    out = Path(args.out) if args.out else Path("gemv_latency.csv")
    out.write_text(report.to_csv())
    print(f"# wrote {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    print(f"# verify seed={args.seed} quick={args.quick}")
    results = run_all(quick=args.quick, seed=args.seed)
    for res in results:
        print(res.line())
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"# {len(failed)} of {len(results)} checks failed")
        return EXIT_VERIFY_FAILED
    print(f"# all {len(results)} checks passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gatekit",
        description="Sparse-activation gating toolkit")
    parser.add_argument("--version", action="version",
                        version=f"gatekit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-bench",
                       help="synthetic approximation-error benchmark")
    p.add_argument("--dims", default="1024,1024",
                   help="layer sizes n0..nL, comma-separated")
    p.add_argument("--sparsity", default="0.25,0.4,0.5,0.65")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--methods", default="teal,wina")
    p.add_argument("--orthogonalize", action="store_true")
    p.add_argument("--activation", choices=("linear", "silu"), default="linear")
    p.add_argument("--input-dist", choices=("standard_normal", "kaiming"),
                   default="standard_normal")
    p.add_argument("--rsparse-rank", type=int, default=16)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_synth_bench)

    p = sub.add_parser("ortho", help="orthogonalize a net file")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--report", default=None)
    p.add_argument("--rotate-input", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_ortho)

    p = sub.add_parser("allocate", help="greedy per-layer sparsity allocation")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--target", type=float, required=True)
    p.add_argument("--step", type=float, default=0.05)
    p.add_argument("--method", choices=METHODS, default="wina")
    p.add_argument("--max-sparsity", type=float, default=0.95)
    p.add_argument("--calib", type=int, default=16)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("cost", help="analytic cost factors for a block")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--a", type=float, required=True)
    p.add_argument("--r", type=int, default=0)
    p.add_argument("--plan", default=None,
                   help="allocation plan JSON for GEMV FLOP savings")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("gemv-bench", help="gather-kernel latency benchmark")
    p.add_argument("--rows", type=int, default=2048)
    p.add_argument("--cols", type=int, default=8192)
    p.add_argument("--large-shape", action="store_true",
                   help="use the 5120x17920 shape (largest GEMV of a 14B-class decoder)")
    p.add_argument("--sparsity", default="0,0.25,0.5,0.65,0.9")
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_gemv_bench)

    p = sub.add_parser("verify", help="run the oracle suite")
    p.add_argument("--quick", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "seed", None) is None:
        try:
            args.seed = _default_seed()
        except UsageError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NetFormatError as exc:
        print(f"error: malformed net file at {exc.location}: {exc}",
              file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
