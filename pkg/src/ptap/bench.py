"""Benchmark driver: algorithm comparison runs with memory and timing.

A run executes one symbolic and R numeric triple products (default R=11)
for a chosen algorithm on a chosen problem, recording max-over-ranks memory
per ledger category and per-phase times.  Reports serialize to CSV (a fixed
column set), JSON (the same fields plus per-category averages and message
volume), or an aligned text table.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .comm import dump_trace, spawn_ranks
from .errors import SizeCapError
from .mmio import read_matrix_market
from .partition import assemble_global, make_partition, dist_from_global
from .problems import (
    GridSpec,
    ORACLE_SIZE_CAP,
    build_interpolation,
    build_model_operator,
    grid_dims,
    oracle_ptap,
    random_instance,
)
from .sparse import CsrMatrix
from .tripleproduct import (
    ALGORITHMS,
    ALL_AT_ONCE,
    CACHE_FREE,
    CACHE_KEEP,
    TWO_STEP,
    run_numeric,
    run_symbolic,
)

CSV_COLUMNS = (
    "np",
    "algorithm",
    "mem_input",
    "mem_output",
    "mem_aux",
    "mem_transient_peak",
    "mem_plan",
    "time_sym_s",
    "time_num_s",
    "time_total_s",
    "repeats",
    "verified",
)

VERIFY_TOL = 1e-12


@dataclass
class BenchConfig:
    algorithm: str = ALL_AT_ONCE
    nranks: int = 1
    repeats: int = 11
    cache: str = CACHE_KEEP
    scheduler: str = "sequential"
    verify: bool = False
    grid: GridSpec | None = None
    random: tuple[int, int, float, int] | None = None
    load_a: str | None = None
    load_p: str | None = None
    trace_path: str | None = None

    def problem_label(self) -> str:
        if self.grid is not None:
            return f"grid {self.grid.nx}x{self.grid.ny}x{self.grid.nz}"
        if self.random is not None:
            n, m, d, s = self.random
            return f"random n={n} m={m} density={d} seed={s}"
        return f"files {self.load_a} {self.load_p}"


@dataclass
class RunReport:
    """One benchmark run; the first twelve fields are the CSV columns."""

    nranks: int
    algorithm: str
    mem_input: int
    mem_output: int
    mem_aux: int
    mem_transient_peak: int
    mem_plan: int
    time_sym_s: float
    time_num_s: float
    time_total_s: float
    repeats: int
    verified: str
    problem: str = ""
    cache: str = ""
    scheduler: str = ""
    mem_avg: dict = field(default_factory=dict)
    mem_product_peak: int = 0
    message_volume: dict = field(default_factory=dict)
    symbolic_runs: int = 0
    verify_max_rel_error: float | None = None

    def core_row(self) -> dict:
        row = {c: getattr(self, "nranks" if c == "np" else c) for c in CSV_COLUMNS}
        return row


def _global_operands(config: BenchConfig) -> tuple[CsrMatrix, CsrMatrix]:
    """Sequentially assembled inputs, used for oracle verification only."""
    if config.grid is not None:
        part = make_partition(grid_dims(config.grid)[0], 1)
        cpart = make_partition(grid_dims(config.grid)[1], 1)
        a = build_model_operator(config.grid, part, 0).local.to_global_rows()
        p = build_interpolation(config.grid, part, cpart, 0).local.to_global_rows()
        return a, p
    if config.random is not None:
        n, m, d, s = config.random
        return random_instance(n, m, d, s)
    return read_matrix_market(config.load_a), read_matrix_market(config.load_p)


def _problem_sizes(config: BenchConfig) -> tuple[int, int]:
    if config.grid is not None:
        return grid_dims(config.grid)
    if config.random is not None:
        return config.random[0], config.random[1]
    a = read_matrix_market(config.load_a)
    p = read_matrix_market(config.load_p)
    return a.nrows, p.ncols


def _rank_operands(config: BenchConfig, files: tuple | None, ctx):
    if config.grid is not None:
        n_fine, n_coarse = grid_dims(config.grid)
        fp = make_partition(n_fine, ctx.nranks)
        cp = make_partition(n_coarse, ctx.nranks)
        return (
            build_model_operator(config.grid, fp, ctx.rank),
            build_interpolation(config.grid, fp, cp, ctx.rank),
        )
    if config.random is not None:
        n, m, d, s = config.random
        a, p = random_instance(n, m, d, s)
    else:
        a, p = files
    rp = make_partition(a.nrows, ctx.nranks)
    cp = make_partition(p.ncols, ctx.nranks)
    return dist_from_global(a, rp, rp, ctx.rank), dist_from_global(p, rp, cp, ctx.rank)


def _execute(config: BenchConfig):
    if config.algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {config.algorithm!r}")
    if config.cache not in (CACHE_KEEP, CACHE_FREE):
        raise ValueError(f"unknown cache policy {config.cache!r}")
    n, m = _problem_sizes(config)
    if config.verify and max(n, m) > ORACLE_SIZE_CAP:
        raise SizeCapError(
            f"verification needs the dense oracle, which is capped at dimension "
            f"{ORACLE_SIZE_CAP}; this problem is {n}x{m}. Rerun without --verify "
            "or pick a smaller problem."
        )
    files = None
    if config.load_a is not None:
        files = (read_matrix_market(config.load_a), read_matrix_market(config.load_p))

    def prog(ctx):
        with ctx.timer.phase("total"):
            a, p = _rank_operands(config, files, ctx)
            ctx.ledger.add("input_matrices", a.local.nbytes + p.local.nbytes)
            plan = run_symbolic(a, p, config.algorithm, ctx)
            local = None
            for _ in range(config.repeats):
                local = run_numeric(a, p, plan, ctx)
            if config.cache == CACHE_FREE:
                plan.release_cache(ctx)
        return local, ctx.ledger.snapshot(), ctx.timer.snapshot(), plan.counters

    trace: list = []
    results = spawn_ranks(config.nranks, prog, scheduler=config.scheduler, trace=trace)
    if config.trace_path:
        dump_trace(trace, config.trace_path)
    c_global = assemble_global([r[0] for r in results], ncols=m)

    verified = "skipped"
    max_rel = None
    if config.verify:
        a, p = _global_operands(config)
        want = oracle_ptap(a, p)
        got = c_global.to_dense()
        scale = max(np.abs(want).max(), 1e-300)
        max_rel = float(np.abs(got - want).max() / scale)
        verified = "pass" if max_rel <= VERIFY_TOL else "fail"

    snaps = [r[1] for r in results]
    timers = [r[2] for r in results]
    volume: dict[str, dict] = {}
    for rec in trace:
        slot = volume.setdefault(rec.kind, {"messages": 0, "bytes": 0})
        slot["messages"] += 1
        slot["bytes"] += rec.nbytes

    def mx(fn):
        return max(fn(s) for s in snaps)

    def avg(fn):
        return sum(fn(s) for s in snaps) / len(snaps)

    report = RunReport(
        nranks=config.nranks,
        algorithm=config.algorithm,
        mem_input=mx(lambda s: s.current["input_matrices"]),
        mem_output=mx(lambda s: s.current["output_matrix"]),
        mem_aux=mx(lambda s: s.peak["auxiliary_matrices"]),
        mem_transient_peak=mx(lambda s: s.peak["transient_hash_peak"]),
        mem_plan=mx(lambda s: s.current["plan_cache"]),
        time_sym_s=max(t.get("symbolic", 0.0) for t in timers),
        time_num_s=max(t.get("numeric", 0.0) for t in timers),
        time_total_s=max(t.get("total", 0.0) for t in timers),
        repeats=config.repeats,
        verified=verified,
        problem=config.problem_label(),
        cache=config.cache,
        scheduler=config.scheduler,
        mem_avg={
            "input_matrices": avg(lambda s: s.current["input_matrices"]),
            "output_matrix": avg(lambda s: s.current["output_matrix"]),
            "auxiliary_matrices": avg(lambda s: s.peak["auxiliary_matrices"]),
            "transient_hash_peak": avg(lambda s: s.peak["transient_hash_peak"]),
            "plan_cache": avg(lambda s: s.current["plan_cache"]),
            "product_peak": avg(lambda s: s.product_peak),
        },
        mem_product_peak=mx(lambda s: s.product_peak),
        message_volume=volume,
        symbolic_runs=max(r[3].symbolic_runs for r in results),
        verify_max_rel_error=max_rel,
    )
    return report, c_global


def run_benchmark(config: BenchConfig) -> RunReport:
    """One symbolic + ``repeats`` numeric passes; see the module docstring."""
    report, _ = _execute(config)
    return report


@dataclass
class Comparison:
    reports: list[RunReport]
    memory_ratio_two_step_over_allatonce: float
    max_cross_rel_error: float


def compare_algorithms(config: BenchConfig) -> Comparison:
    """Run all three algorithms on identical inputs; cross-check the outputs
    and report the two-step / all-at-once triple-product memory ratio."""
    reports = []
    denses = []
    for alg in ALGORITHMS:
        report, c = _execute(replace(config, algorithm=alg))
        reports.append(report)
        denses.append(c.to_dense())
    scale = max(max(np.abs(d).max() for d in denses), 1e-300)
    cross = 0.0
    for i in range(len(denses)):
        for j in range(i + 1, len(denses)):
            cross = max(cross, float(np.abs(denses[i] - denses[j]).max() / scale))
    two = next(r for r in reports if r.algorithm == TWO_STEP)
    aao = next(r for r in reports if r.algorithm == ALL_AT_ONCE)
    ratio = two.mem_product_peak / max(aao.mem_product_peak, 1)
    return Comparison(reports, ratio, cross)


# -- serialization ---------------------------------------------------------


def _format_cell(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_report(report, fmt: str, path=None) -> str:
    """Serialize one report or a list of reports; writes to path if given."""
    reports = report if isinstance(report, list) else [report]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for r in reports:
            w.writerow({k: _format_cell(v) for k, v in r.core_row().items()})
        text = buf.getvalue()
    elif fmt == "json":
        dicts = []
        for r in reports:
            d = asdict(r)
            d["np"] = d.pop("nranks")  # mirror the CSV column name
            dicts.append(d)
        text = json.dumps(dicts, indent=2) + "\n"
    elif fmt == "table":
        rows = [[_format_cell(v) for v in r.core_row().values()] for r in reports]
        widths = [
            max(len(CSV_COLUMNS[i]), *(len(row[i]) for row in rows)) for i in range(len(CSV_COLUMNS))
        ]
        lines = [
            "  ".join(c.ljust(w) for c, w in zip(CSV_COLUMNS, widths)),
            "  ".join("-" * w for w in widths),
        ]
        lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in rows]
        text = "\n".join(lines) + "\n"
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if path:
        with open(path, "w") as f:
            f.write(text)
    return text


def read_report(path, fmt: str) -> list[RunReport]:
    """Read reports back; CSV restores exactly the core columns."""
    with open(path) as f:
        text = f.read()
    if fmt == "json":
        out = []
        for d in json.loads(text):
            d["nranks"] = d.pop("np")
            out.append(RunReport(**d))
        return out
    if fmt == "csv":
        out = []
        for row in csv.DictReader(io.StringIO(text)):
            out.append(
                RunReport(
                    nranks=int(row["np"]),
                    algorithm=row["algorithm"],
                    mem_input=int(row["mem_input"]),
                    mem_output=int(row["mem_output"]),
                    mem_aux=int(row["mem_aux"]),
                    mem_transient_peak=int(row["mem_transient_peak"]),
                    mem_plan=int(row["mem_plan"]),
                    time_sym_s=float(row["time_sym_s"]),
                    time_num_s=float(row["time_num_s"]),
                    time_total_s=float(row["time_total_s"]),
                    repeats=int(row["repeats"]),
                    verified=row["verified"],
                )
            )
        return out
    raise ValueError(f"unknown format {fmt!r}")
