"""Benchmark and verification command line.

Exit codes: 0 success (and verification passed when requested), 2 on a
verification mismatch, 1 on usage or runtime errors.
"""

from __future__ import annotations

import argparse
import sys

from .bench import BenchConfig, Comparison, compare_algorithms, emit_report, run_benchmark
from .problems import GridSpec
from .tripleproduct import ALGORITHMS, CACHE_FREE, CACHE_KEEP


def _parse_grid(text: str) -> GridSpec:
    try:
        nx, ny, nz = (int(p) for p in text.split(","))
        return GridSpec(nx, ny, nz)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"--grid wants NX,NY,NZ: {exc}") from exc


def _parse_random(text: str):
    try:
        n, m, density, seed = text.split(",")
        return int(n), int(m), float(density), int(seed)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"--random wants n,m,density,seed: {exc}") from exc


def _add_common(p: argparse.ArgumentParser):
    src = p.add_argument_group("problem (pick one)")
    src.add_argument("--grid", type=_parse_grid, help="coarse grid NX,NY,NZ (model problem)")
    src.add_argument("--random", type=_parse_random, help="random instance n,m,density,seed")
    src.add_argument("--load-a", help="Matrix Market file for A")
    src.add_argument("--load-p", help="Matrix Market file for P")
    p.add_argument("--ranks", type=int, default=1, help="number of simulated ranks")
    p.add_argument("--repeats", type=int, default=11, help="numeric passes per symbolic (default 11)")
    p.add_argument("--cache", choices=(CACHE_FREE, CACHE_KEEP), default=CACHE_KEEP)
    p.add_argument("--verify", action="store_true", help="check against the dense oracle")
    p.add_argument("--report", help="write the report to this path")
    p.add_argument("--format", choices=("csv", "json", "table"), default="table")
    p.add_argument("--scheduler", choices=("sequential", "concurrent"), default="sequential")
    p.add_argument("--trace-messages", help="dump the message trace to this path")


def _config_from(args) -> BenchConfig:
    picked = sum(x is not None for x in (args.grid, args.random, args.load_a))
    if picked != 1:
        raise SystemExit2("pick exactly one of --grid, --random, or --load-a/--load-p")
    if (args.load_a is None) != (args.load_p is None):
        raise SystemExit2("--load-a and --load-p go together")
    return BenchConfig(
        algorithm=getattr(args, "algorithm", "allatonce"),
        nranks=args.ranks,
        repeats=args.repeats,
        cache=args.cache,
        scheduler=args.scheduler,
        verify=args.verify,
        grid=args.grid,
        random=args.random,
        load_a=args.load_a,
        load_p=args.load_p,
        trace_path=args.trace_messages,
    )


class SystemExit2(Exception):
    """Usage error surfaced with exit code 1."""


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ptap",
        description="Distributed sparse triple-product benchmark (C = Pt*A*P)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="benchmark one algorithm")
    run_p.add_argument("--algorithm", choices=ALGORITHMS, required=True)
    _add_common(run_p)

    cmp_p = sub.add_parser("compare", help="run all three algorithms on the same problem")
    _add_common(cmp_p)

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; this tool reserves 2 for
        # verification mismatches, so remap everything nonzero to 1.
        return 0 if exc.code in (0, None) else 1
    try:
        config = _config_from(args)
        if args.command == "run":
            report = run_benchmark(config)
            text = emit_report(report, args.format, args.report)
            if not args.report:
                sys.stdout.write(text)
            if report.verified == "fail":
                print(
                    f"verification FAILED: max relative error {report.verify_max_rel_error:.3e}",
                    file=sys.stderr,
                )
                return 2
            if report.verified == "pass":
                print(f"verified: match <= {report.verify_max_rel_error:.3e}", file=sys.stderr)
            return 0
        comparison: Comparison = compare_algorithms(config)
        text = emit_report(comparison.reports, args.format, args.report)
        if not args.report:
            sys.stdout.write(text)
        print(
            f"memory ratio two-step / allatonce: "
            f"{comparison.memory_ratio_two_step_over_allatonce:.2f}; "
            f"max cross-algorithm relative difference: {comparison.max_cross_rel_error:.3e}",
            file=sys.stderr,
        )
        if any(r.verified == "fail" for r in comparison.reports):
            return 2
        return 0
    except SystemExit2 as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime/usage errors -> exit 1 per the contract
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
