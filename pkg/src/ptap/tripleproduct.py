"""The three C = Pt*A*P algorithms behind one driver with a cache policy.

* two-step: form C~ = A*P row-wise, explicitly transpose the local P
  blocks, then compute Pt_o*C~ (shipped to the owning ranks) and Pt_d*C~
  locally, without gathering any remote rows of C~.  Fast, but stores the
  auxiliary matrices C~, the transpose of P, and the send-side product.
* all-at-once: one pass per phase; each needed row of A*P is computed into
  a hash accumulator and immediately scattered as an outer product with the
  P row, first for the remotely-owned output rows (sent to their owners),
  then for the locally-owned rows.  No auxiliary matrix is ever stored.
* merged all-at-once: the same, but one fused loop computes each A*P row
  once and feeds both the send-side and the local-side outer products.

All three produce structurally identical C; value differences stay within
rounding because every merge runs in a fixed order (local contributions
first, then received batches by ascending source rank).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as _k
from .comm import (
    ContributionBatch,
    RankContext,
    RemoteRows,
    exchange_contributions_begin,
    exchange_contributions_complete,
    update_remote_rows_numeric,
)
from .errors import PartitionMismatchError, StructuralDriftError
from .ledger import PlanCounters
from .partition import DistMatrix, RowPartition
from .sparse import CsrMatrix, RowAccumulator, RowSet
from .spgemm import (
    AllocatedMatrix,
    build_allocated,
    gather_for_product,
    numeric_ap,
    symbolic_ap,
    _check_conforming,
    _kernel_args_numeric,
    _kernel_args_symbolic,
    _ledger_transient_peak,
)

TWO_STEP = "two-step"
ALL_AT_ONCE = "allatonce"
MERGED = "merged"
ALGORITHMS = (TWO_STEP, ALL_AT_ONCE, MERGED)

CACHE_KEEP = "keep"
CACHE_FREE = "free"


@dataclass
class SendStaging:
    """Preallocated send-side rows of C shaped by the symbolic pass.

    The numeric loops insert values directly into this structure, so the
    send path does no hashing.  ``fill`` is verification scaffolding.
    """

    rows: np.ndarray
    indptr: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    fill: np.ndarray
    dest_slices: list[tuple[int, int, int]]

    @property
    def nbytes(self) -> int:
        return self.rows.nbytes + self.indptr.nbytes + self.cols.nbytes + self.vals.nbytes

    def reset(self):
        self.vals[:] = 0.0
        self.fill[:] = 0

    def verify_filled(self):
        if self.fill.size and not self.fill.all():
            raise StructuralDriftError(
                f"numeric send pass missed {int(self.fill.size - self.fill.sum())} "
                "staged slots"
            )

    def batches(self, with_values: bool) -> list[ContributionBatch]:
        out = []
        for dest, lo, hi in self.dest_slices:
            a, b = int(self.indptr[lo]), int(self.indptr[hi])
            out.append(
                ContributionBatch(
                    dest,
                    self.rows[lo:hi],
                    self.indptr[lo : hi + 1] - a,
                    self.cols[a:b],
                    self.vals[a:b] if with_values else None,
                )
            )
        return out


@dataclass
class TripleProductPlan:
    """Cached symbolic state enabling repeated numeric triple products."""

    algorithm: str
    rank: int
    c_alloc: AllocatedMatrix
    remote_rows: RemoteRows | None
    staging: SendStaging | None
    counters: PlanCounters = field(default_factory=PlanCounters)
    ctilde: AllocatedMatrix | None = None
    pt_d: CsrMatrix | None = None
    pt_o: CsrMatrix | None = None
    pt_d_perm: np.ndarray | None = None
    pt_o_perm: np.ndarray | None = None
    released: bool = False
    _ledgered: list[tuple[str, int]] = field(default_factory=list)

    def _track(self, ledger, category: str, nbytes: int):
        ledger.add(category, nbytes)
        self._ledgered.append((category, nbytes))

    def release_cache(self, ctx: RankContext):
        """Free everything beyond C itself and return the bytes to the ledger."""
        if self.released:
            return
        for category, nbytes in self._ledgered:
            ctx.ledger.release(category, nbytes)
        self._ledgered.clear()
        self.remote_rows = None
        self.staging = None
        self.ctilde = None
        self.pt_d = self.pt_o = None
        self.pt_d_perm = self.pt_o_perm = None
        self.released = True

    def _require_live(self):
        if self.released:
            raise StructuralDriftError(
                "plan internals were released (free-after-solve); rebuild the plan"
            )


def _check_triple_operands(a: DistMatrix, p: DistMatrix):
    if a.row_part != a.col_part:
        raise PartitionMismatchError("A must be square with matching row/column partitions")
    if a.col_part.nglobal != p.row_part.nglobal:
        raise PartitionMismatchError(
            f"dimension mismatch: A has {a.col_part.nglobal} columns, "
            f"P has {p.row_part.nglobal} rows"
        )
    _check_conforming(a, p)
    m = p.col_part.nglobal
    if m and m * m >= 2**62:
        raise PartitionMismatchError("output dimension too large for combined row/col keys")


# -- symbolic assembly pieces -------------------------------------------------


def _drain_arena(keys: np.ndarray, m_total: int):
    occ = keys[keys >= 0]
    occ.sort()
    return occ // m_total, occ % m_total


def _build_staging(grows: np.ndarray, gcols: np.ndarray, c_part: RowPartition) -> SendStaging:
    rows, starts = np.unique(grows, return_index=True)
    indptr = np.zeros(rows.shape[0] + 1, np.int64)
    indptr[:-1] = starts
    indptr[-1] = grows.shape[0]
    owners = np.searchsorted(c_part.offsets, rows, side="right") - 1
    dest_slices = []
    for r in np.unique(owners):
        idx = np.nonzero(owners == r)[0]
        dest_slices.append((int(r), int(idx[0]), int(idx[-1]) + 1))
    return SendStaging(
        rows,
        indptr,
        gcols.copy(),
        np.zeros(gcols.shape[0]),
        np.zeros(gcols.shape[0], np.uint8),
        dest_slices,
    )


def _merge_symbolic_batches(lkeys, lsize, batches, row_lo, row_hi, m_total):
    for b in batches:
        if b.rows.size and (b.rows.min() < row_lo or b.rows.max() >= row_hi):
            raise StructuralDriftError(
                f"received contribution rows outside the owned range [{row_lo}, {row_hi})"
            )
        lkeys, lsize = _k.arena_insert_pairs(
            lkeys, lsize, b.rows - row_lo, b.indptr, b.cols, m_total
        )
    return lkeys, lsize


def _alloc_from_arena(lkeys, c_row_lo, c_row_hi, c_col_lo, c_col_hi, m_total) -> AllocatedMatrix:
    lrows, gcols = _drain_arena(lkeys, m_total)
    nrows = c_row_hi - c_row_lo
    in_diag = (gcols >= c_col_lo) & (gcols < c_col_hi)
    nzd = np.bincount(lrows[in_diag], minlength=nrows).astype(np.int64)
    nzo = np.bincount(lrows[~in_diag], minlength=nrows).astype(np.int64)
    return build_allocated(
        c_row_lo, c_row_hi, c_col_lo, c_col_hi,
        nzd, nzo, gcols[in_diag] - c_col_lo, gcols[~in_diag],
    )


def _merge_numeric_batches(alloc: AllocatedMatrix, batches):
    cl = alloc.local
    for b in batches:
        err = _k.scatter_add_rows(
            b.rows - cl.row_lo, b.indptr, b.cols, b.vals,
            cl.diag.row_offsets, cl.diag.col_indices, cl.diag.values, alloc.fill_d,
            cl.offdiag.row_offsets, cl.offdiag.col_indices, cl.offdiag.values,
            alloc.fill_o, cl.col_map,
            cl.col_lo, cl.col_hi,
        )
        if err >= 0:
            raise StructuralDriftError(
                f"received contribution from rank {b.source} does not fit "
                "the allocated structure"
            )


def _zero_output(alloc: AllocatedMatrix):
    alloc.local.diag.values[:] = 0.0
    alloc.local.offdiag.values[:] = 0.0
    alloc.reset_fill()


# -- all-at-once family -------------------------------------------------------


def _outer_symbolic(a, p, ctx, *, merged: bool) -> TripleProductPlan:
    _check_triple_operands(a, p)
    algorithm = MERGED if merged else ALL_AT_ONCE
    with ctx.timer.phase("symbolic"):
        rr = gather_for_product(ctx, a, p)
        al, pl = a.local, p.local
        m_total = p.col_part.nglobal
        c_lo, c_hi = pl.col_lo, pl.col_hi
        plan = TripleProductPlan(algorithm, ctx.rank, None, rr, None)
        plan.counters.symbolic_runs += 1
        plan._track(ctx.ledger, "plan_cache", rr.nbytes)
        sym_args = _kernel_args_symbolic(al, pl, rr)

        skeys = _k.hs_new(64)
        lkeys = _k.hs_new(64)
        if merged:
            skeys, ssize, lkeys, lsize, rows, rdc, roc = _k.outer_symbolic_driver(
                *sym_args, al.nrows, m_total, True, True, skeys, 0, lkeys, 0
            )
            plan.counters.symbolic_row_kernel_calls += int(rows)
            _ledger_transient_peak(ctx.ledger, (rdc + roc) * RowSet.BYTES_PER_SLOT)
            ctx.ledger.add("transient_hash_peak", skeys.nbytes + lkeys.nbytes)
            grows, gcols = _drain_arena(skeys, m_total)
            staging = _build_staging(grows, gcols, p.col_part)
            handle = exchange_contributions_begin(
                ctx, staging.batches(with_values=False), p.col_part
            )
        else:
            skeys, ssize, _, _, rows1, rdc, roc = _k.outer_symbolic_driver(
                *sym_args, al.nrows, m_total, True, False, skeys, 0, lkeys, 0
            )
            plan.counters.symbolic_row_kernel_calls += int(rows1)
            _ledger_transient_peak(ctx.ledger, (rdc + roc) * RowSet.BYTES_PER_SLOT)
            ctx.ledger.add("transient_hash_peak", skeys.nbytes)
            grows, gcols = _drain_arena(skeys, m_total)
            staging = _build_staging(grows, gcols, p.col_part)
            handle = exchange_contributions_begin(
                ctx, staging.batches(with_values=False), p.col_part
            )
            _, _, lkeys, lsize, rows2, rdc, roc = _k.outer_symbolic_driver(
                *sym_args, al.nrows, m_total, False, True, skeys, 0, lkeys, 0
            )
            plan.counters.symbolic_row_kernel_calls += int(rows2)
            _ledger_transient_peak(ctx.ledger, (rdc + roc) * RowSet.BYTES_PER_SLOT)
            ctx.ledger.add("transient_hash_peak", lkeys.nbytes)

        received = exchange_contributions_complete(ctx, handle, with_values=False)
        lbytes_before = lkeys.nbytes
        lkeys, lsize = _merge_symbolic_batches(
            lkeys, lsize, received, c_lo, c_hi, m_total
        )
        if lkeys.nbytes != lbytes_before:
            ctx.ledger.release("transient_hash_peak", lbytes_before)
            ctx.ledger.add("transient_hash_peak", lkeys.nbytes)
        plan.c_alloc = _alloc_from_arena(lkeys, c_lo, c_hi, c_lo, c_hi, m_total)
        ctx.ledger.add("output_matrix", plan.c_alloc.nbytes)
        ctx.ledger.release("transient_hash_peak", skeys.nbytes + lkeys.nbytes)
        plan.staging = staging
        plan._track(ctx.ledger, "plan_cache", staging.nbytes)
    return plan


def _outer_numeric(a, p, plan: TripleProductPlan, ctx, *, merged: bool):
    expected = MERGED if merged else ALL_AT_ONCE
    if plan.algorithm != expected:
        raise ValueError(f"plan was built by {plan.algorithm!r}, not {expected!r}")
    plan._require_live()
    with ctx.timer.phase("numeric"):
        if ctx.nranks > 1:
            update_remote_rows_numeric(ctx, plan.remote_rows, p)
        al, pl = a.local, p.local
        staging = plan.staging
        alloc = plan.c_alloc
        staging.reset()
        _zero_output(alloc)
        cl = alloc.local
        num_args = _kernel_args_numeric(al, pl, plan.remote_rows)
        c_args = (
            cl.diag.row_offsets, cl.diag.col_indices, cl.diag.values, alloc.fill_d,
            cl.offdiag.row_offsets, cl.offdiag.col_indices, cl.offdiag.values,
            alloc.fill_o, cl.col_map,
        )
        stage_args = (staging.rows, staging.indptr, staging.cols, staging.vals, staging.fill)
        if merged:
            err, rows, acc_cap = _k.outer_numeric_driver(
                *num_args, pl.col_lo, pl.col_hi, al.nrows, True, True,
                *stage_args, *c_args,
            )
            if err >= 0:
                raise StructuralDriftError(f"numeric outer product drifted at local row {err}")
            plan.counters.numeric_row_kernel_calls += int(rows)
            handle = exchange_contributions_begin(ctx, staging.batches(True), p.col_part)
        else:
            err, rows1, acc_cap = _k.outer_numeric_driver(
                *num_args, pl.col_lo, pl.col_hi, al.nrows, True, False,
                *stage_args, *c_args,
            )
            if err >= 0:
                raise StructuralDriftError(f"numeric send loop drifted at local row {err}")
            plan.counters.numeric_row_kernel_calls += int(rows1)
            handle = exchange_contributions_begin(ctx, staging.batches(True), p.col_part)
            err, rows2, acc_cap = _k.outer_numeric_driver(
                *num_args, pl.col_lo, pl.col_hi, al.nrows, False, True,
                *stage_args, *c_args,
            )
            if err >= 0:
                raise StructuralDriftError(f"numeric local loop drifted at local row {err}")
            plan.counters.numeric_row_kernel_calls += int(rows2)
        _ledger_transient_peak(ctx.ledger, acc_cap * RowAccumulator.BYTES_PER_SLOT)
        received = exchange_contributions_complete(ctx, handle, with_values=True)
        _merge_numeric_batches(alloc, received)
        staging.verify_filled()
        alloc.verify_filled("PtAP")
        plan.counters.numeric_runs += 1
    return alloc.local


def aao_symbolic(a: DistMatrix, p: DistMatrix, ctx: RankContext) -> TripleProductPlan:
    """All-at-once symbolic pass: two structural outer-product loops."""
    return _outer_symbolic(a, p, ctx, merged=False)


def aao_numeric(a: DistMatrix, p: DistMatrix, plan: TripleProductPlan, ctx: RankContext):
    """All-at-once numeric pass into the plan's allocation."""
    return _outer_numeric(a, p, plan, ctx, merged=False)


def merged_symbolic(a: DistMatrix, p: DistMatrix, ctx: RankContext) -> TripleProductPlan:
    """Merged variant: one fused loop computes each A*P row once."""
    return _outer_symbolic(a, p, ctx, merged=True)


def merged_numeric(a: DistMatrix, p: DistMatrix, plan: TripleProductPlan, ctx: RankContext):
    return _outer_numeric(a, p, plan, ctx, merged=True)


# -- two-step -----------------------------------------------------------------


def two_step_symbolic(a: DistMatrix, p: DistMatrix, ctx: RankContext) -> TripleProductPlan:
    """Two-step symbolic pass: allocate C~ = A*P, transpose P locally, and
    run the two local second products without gathering any remote rows."""
    _check_triple_operands(a, p)
    with ctx.timer.phase("symbolic"):
        ctilde, rr = symbolic_ap(a, p, ctx, alloc_category="auxiliary_matrices")
        # symbolic_ap books rr under plan_cache; adopt both into the plan.
        plan = TripleProductPlan(TWO_STEP, ctx.rank, None, rr, None, ctilde=ctilde)
        plan.counters.symbolic_runs += 1
        plan.counters.symbolic_row_kernel_calls += a.local.nrows
        plan._ledgered.append(("auxiliary_matrices", ctilde.nbytes))
        plan._ledgered.append(("plan_cache", rr.nbytes))

        pl = p.local
        pt_d, perm_d = pl.diag.transpose_with_permutation()
        pt_o, perm_o = pl.offdiag.transpose_with_permutation()
        plan.pt_d, plan.pt_o = pt_d, pt_o
        plan.pt_d_perm, plan.pt_o_perm = perm_d, perm_o
        plan._track(ctx.ledger, "auxiliary_matrices", pt_d.nbytes + pt_o.nbytes)
        plan._track(ctx.ledger, "plan_cache", perm_d.nbytes + perm_o.nbytes)

        m_total = p.col_part.nglobal
        c_lo, c_hi = pl.col_lo, pl.col_hi
        ct = ctilde.local
        ct_args = (
            ct.diag.row_offsets, ct.diag.col_indices,
            ct.offdiag.row_offsets, ct.offdiag.col_indices, ct.col_map,
        )
        skeys = _k.hs_new(64)
        skeys, ssize = _k.local_spgemm_symbolic_arena(
            pt_o.row_offsets, pt_o.col_indices, pt_o.nrows, pl.col_map,
            *ct_args, c_lo, skeys, 0, m_total,
        )
        ctx.ledger.add("transient_hash_peak", skeys.nbytes)
        grows, gcols = _drain_arena(skeys, m_total)
        staging = _build_staging(grows, gcols, p.col_part)
        handle = exchange_contributions_begin(ctx, staging.batches(False), p.col_part)

        lkeys = _k.hs_new(64)
        local_targets = np.arange(pt_d.nrows, dtype=np.int64)
        lkeys, lsize = _k.local_spgemm_symbolic_arena(
            pt_d.row_offsets, pt_d.col_indices, pt_d.nrows, local_targets,
            *ct_args, c_lo, lkeys, 0, m_total,
        )
        ctx.ledger.add("transient_hash_peak", lkeys.nbytes)

        received = exchange_contributions_complete(ctx, handle, with_values=False)
        lbytes_before = lkeys.nbytes
        lkeys, lsize = _merge_symbolic_batches(lkeys, lsize, received, c_lo, c_hi, m_total)
        if lkeys.nbytes != lbytes_before:
            ctx.ledger.release("transient_hash_peak", lbytes_before)
            ctx.ledger.add("transient_hash_peak", lkeys.nbytes)
        plan.c_alloc = _alloc_from_arena(lkeys, c_lo, c_hi, c_lo, c_hi, m_total)
        ctx.ledger.add("output_matrix", plan.c_alloc.nbytes)
        ctx.ledger.release("transient_hash_peak", skeys.nbytes + lkeys.nbytes)
        plan.staging = staging
        plan._track(ctx.ledger, "auxiliary_matrices", staging.nbytes)
    return plan


def two_step_numeric(a: DistMatrix, p: DistMatrix, plan: TripleProductPlan, ctx: RankContext):
    """Two-step numeric pass: refresh C~, refresh the transpose values, and
    rerun the two local products onto the cached structures."""
    if plan.algorithm != TWO_STEP:
        raise ValueError(f"plan was built by {plan.algorithm!r}, not {TWO_STEP!r}")
    plan._require_live()
    with ctx.timer.phase("numeric"):
        numeric_ap(a, p, plan.ctilde, plan.remote_rows, ctx)
        pl = p.local
        plan.pt_d.values[:] = pl.diag.values[plan.pt_d_perm]
        plan.pt_o.values[:] = pl.offdiag.values[plan.pt_o_perm]

        staging = plan.staging
        alloc = plan.c_alloc
        staging.reset()
        _zero_output(alloc)
        ct = plan.ctilde.local
        cl = alloc.local
        ct_num = (
            ct.diag.row_offsets, ct.diag.col_indices, ct.diag.values,
            ct.offdiag.row_offsets, ct.offdiag.col_indices, ct.offdiag.values, ct.col_map,
        )
        err, acc_cap = _k.local_spgemm_numeric_staging(
            plan.pt_o.row_offsets, plan.pt_o.col_indices, plan.pt_o.values,
            plan.pt_o.nrows, pl.col_map,
            *ct_num, cl.col_lo,
            staging.rows, staging.indptr, staging.cols, staging.vals, staging.fill,
        )
        if err >= 0:
            raise StructuralDriftError(f"send-side product drifted at transpose row {err}")
        handle = exchange_contributions_begin(ctx, staging.batches(True), p.col_part)

        local_targets = np.arange(plan.pt_d.nrows, dtype=np.int64)
        err, acc_cap = _k.local_spgemm_numeric_into_c(
            plan.pt_d.row_offsets, plan.pt_d.col_indices, plan.pt_d.values,
            plan.pt_d.nrows, local_targets,
            *ct_num, cl.col_lo,
            cl.diag.row_offsets, cl.diag.col_indices, cl.diag.values, alloc.fill_d,
            cl.offdiag.row_offsets, cl.offdiag.col_indices, cl.offdiag.values,
            alloc.fill_o, cl.col_map,
            cl.col_lo, cl.col_hi,
        )
        if err >= 0:
            raise StructuralDriftError(f"local product drifted at transpose row {err}")
        _ledger_transient_peak(ctx.ledger, acc_cap * RowAccumulator.BYTES_PER_SLOT)
        received = exchange_contributions_complete(ctx, handle, with_values=True)
        _merge_numeric_batches(alloc, received)
        staging.verify_filled()
        alloc.verify_filled("PtAP")
        plan.counters.numeric_runs += 1
    return alloc.local


# -- driver -------------------------------------------------------------------

_SYMBOLIC = {TWO_STEP: two_step_symbolic, ALL_AT_ONCE: aao_symbolic, MERGED: merged_symbolic}
_NUMERIC = {TWO_STEP: two_step_numeric, ALL_AT_ONCE: aao_numeric, MERGED: merged_numeric}


def run_symbolic(a, p, algorithm: str, ctx) -> TripleProductPlan:
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}; pick one of {ALGORITHMS}")
    return _SYMBOLIC[algorithm](a, p, ctx)


def run_numeric(a, p, plan: TripleProductPlan, ctx):
    return _NUMERIC[plan.algorithm](a, p, plan, ctx)


def ptap(
    a: DistMatrix,
    p: DistMatrix,
    algorithm: str,
    ctx: RankContext,
    cache: str = CACHE_KEEP,
):
    """One symbolic plus one numeric triple product; returns (C, plan).

    Under ``cache="keep"`` the plan supports further numeric passes with no
    symbolic recomputation and no new allocation; under ``cache="free"``
    every plan internal beyond C is released before returning.
    """
    if cache not in (CACHE_KEEP, CACHE_FREE):
        raise ValueError(f"cache policy must be '{CACHE_KEEP}' or '{CACHE_FREE}'")
    plan = run_symbolic(a, p, algorithm, ctx)
    local = run_numeric(a, p, plan, ctx)
    if cache == CACHE_FREE:
        plan.release_cache(ctx)
    c = DistMatrix(p.col_part, p.col_part, ctx.rank, local)
    return c, plan
