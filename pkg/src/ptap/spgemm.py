"""Row-wise sparse matrix-matrix multiplication C~ = A*P.

The symbolic pass walks structure only: per row it collects the union of
P-row structures selected by the A row into two hash sets (owned columns /
remote columns), sizes the allocation from the set cardinalities, and
drains the sorted structure straight into the allocated blocks.  The
numeric pass recomputes each row into a hash accumulator and drains it onto
the stored structure, which must match exactly; any mismatch is structural
drift and is reported as such.  Row set and accumulator storage is reused
across rows, growing to the widest row and never shrinking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as _k
from .comm import RankContext, RemoteRows, gather_remote_rows_symbolic, update_remote_rows_numeric
from .errors import PartitionMismatchError, StructuralDriftError
from .ledger import MemoryLedger
from .partition import DistMatrix, LocalMatrix, build_neighbor_list
from .sparse import CsrMatrix, RowAccumulator, RowSet


@dataclass
class RowStructure:
    """Structure of one product row split by ownership of the column."""

    diag_cols: RowSet
    offdiag_cols: RowSet


@dataclass
class AllocatedMatrix:
    """A LocalMatrix whose structure is final and whose values are zeroed.

    ``fill_d``/``fill_o`` are per-entry flags used to verify that every
    numeric pass touches exactly the symbolic structure; they are test
    scaffolding and excluded from the byte accounting.
    """

    local: LocalMatrix
    nzd: np.ndarray
    nzo: np.ndarray
    fill_d: np.ndarray
    fill_o: np.ndarray

    @property
    def nbytes(self) -> int:
        return self.local.nbytes + self.nzd.nbytes + self.nzo.nbytes

    def reset_fill(self):
        self.fill_d[:] = 0
        self.fill_o[:] = 0

    def verify_filled(self, what: str):
        """Every allocated slot must have been written by the numeric pass."""
        if (self.fill_d.size and not self.fill_d.all()) or (
            self.fill_o.size and not self.fill_o.all()
        ):
            short_d = int(self.fill_d.size - self.fill_d.sum())
            short_o = int(self.fill_o.size - self.fill_o.sum())
            raise StructuralDriftError(
                f"{what}: numeric fill missed {short_d} diag and {short_o} offdiag "
                "slots of the symbolic allocation"
            )


def build_allocated(
    row_lo: int,
    row_hi: int,
    col_lo: int,
    col_hi: int,
    nzd: np.ndarray,
    nzo: np.ndarray,
    dcols_local: np.ndarray,
    ocols_global: np.ndarray,
) -> AllocatedMatrix:
    """Finalize per-row counts and sorted column structure into zeroed blocks."""
    nrows = row_hi - row_lo
    ip_d = np.zeros(nrows + 1, np.int64)
    np.cumsum(nzd, out=ip_d[1:])
    ip_o = np.zeros(nrows + 1, np.int64)
    np.cumsum(nzo, out=ip_o[1:])
    col_map = np.unique(ocols_global)
    diag = CsrMatrix(nrows, col_hi - col_lo, ip_d, dcols_local, np.zeros(ip_d[-1]), check=False)
    off = CsrMatrix(
        nrows,
        col_map.shape[0],
        ip_o,
        np.searchsorted(col_map, ocols_global),
        np.zeros(ip_o[-1]),
        check=False,
    )
    local = LocalMatrix(row_lo, row_hi, col_lo, col_hi, diag, off, col_map)
    return AllocatedMatrix(
        local,
        np.asarray(nzd, np.int64),
        np.asarray(nzo, np.int64),
        np.zeros(ip_d[-1], np.uint8),
        np.zeros(ip_o[-1], np.uint8),
    )


def _check_conforming(a: DistMatrix, p: DistMatrix):
    if a.col_part != p.row_part:
        raise PartitionMismatchError(
            "the column partition of A must equal the row partition of P"
        )
    if a.rank != p.rank:
        raise PartitionMismatchError("operands come from different rank contexts")


def _empty_remote_rows(p: DistMatrix) -> RemoteRows:
    rows = CsrMatrix.empty(0, p.col_part.nglobal)
    return RemoteRows(np.zeros(0, np.int64), rows, [], {}, ())


def _kernel_args_symbolic(a: LocalMatrix, p: LocalMatrix, rr: RemoteRows):
    return (
        a.diag.row_offsets, a.diag.col_indices,
        a.offdiag.row_offsets, a.offdiag.col_indices,
        p.diag.row_offsets, p.diag.col_indices,
        p.offdiag.row_offsets, p.offdiag.col_indices, p.col_map,
        rr.rows.row_offsets, rr.rows.col_indices,
        p.col_lo, p.col_hi,
    )


def _kernel_args_numeric(a: LocalMatrix, p: LocalMatrix, rr: RemoteRows):
    return (
        a.diag.row_offsets, a.diag.col_indices, a.diag.values,
        a.offdiag.row_offsets, a.offdiag.col_indices, a.offdiag.values,
        p.diag.row_offsets, p.diag.col_indices, p.diag.values,
        p.offdiag.row_offsets, p.offdiag.col_indices, p.offdiag.values, p.col_map,
        rr.rows.row_offsets, rr.rows.col_indices, rr.rows.values,
    )


def _ledger_transient_peak(ledger: MemoryLedger, nbytes: int):
    # Working memory that lived only inside a kernel call: record its peak.
    ledger.add("transient_hash_peak", nbytes)
    ledger.release("transient_hash_peak", nbytes)


def gather_for_product(ctx: RankContext, a: DistMatrix, p: DistMatrix) -> RemoteRows:
    """The remote P rows selected by A's off-diagonal column map."""
    if ctx.nranks == 1:
        return _empty_remote_rows(p)
    neighbors = build_neighbor_list(a.local, p.row_part)
    rr = gather_remote_rows_symbolic(ctx, neighbors, p)
    if not np.array_equal(rr.source_cols, a.local.col_map):
        raise StructuralDriftError("gathered rows do not match A's off-diagonal columns")
    return rr


def symbolic_row_ap(
    i: int, a: DistMatrix, p: DistMatrix, rr: RemoteRows
) -> RowStructure:
    """Structure of local row i of A*P, classified against the owned
    column range of the product (global column ids in both sets)."""
    rd = RowSet()
    ro = RowSet()
    rd._keys, rd._size, ro._keys, ro._size = _k.row_ap_symbolic(
        i, *_kernel_args_symbolic(a.local, p.local, rr), rd._keys, 0, ro._keys, 0
    )
    return RowStructure(rd, ro)


def numeric_row_ap(
    i: int, a: DistMatrix, p: DistMatrix, rr: RemoteRows
) -> RowAccumulator:
    """Values of local row i of A*P keyed by global column."""
    acc = RowAccumulator()
    acc._keys, acc._vals, acc._size = _k.row_ap_numeric(
        i, *_kernel_args_numeric(a.local, p.local, rr), p.local.col_lo,
        acc._keys, acc._vals, 0,
    )
    return acc


def symbolic_ap(
    a: DistMatrix,
    p: DistMatrix,
    ctx: RankContext,
    alloc_category: str = "output_matrix",
) -> tuple[AllocatedMatrix, RemoteRows]:
    """Symbolic pass of C~ = A*P: gather remote rows, size and build the
    structure of every local row, and allocate the result."""
    _check_conforming(a, p)
    rr = gather_for_product(ctx, a, p)
    al, pl = a.local, p.local
    nzd, nzo, dcols, ocols, rd_cap, ro_cap = _k.ap_symbolic_driver(
        *_kernel_args_symbolic(al, pl, rr), al.nrows
    )
    _ledger_transient_peak(ctx.ledger, (rd_cap + ro_cap) * RowSet.BYTES_PER_SLOT)
    alloc = build_allocated(al.row_lo, al.row_hi, pl.col_lo, pl.col_hi, nzd, nzo, dcols, ocols)
    ctx.ledger.add(alloc_category, alloc.nbytes)
    ctx.ledger.add("plan_cache", rr.nbytes)
    return alloc, rr


def numeric_ap(
    a: DistMatrix,
    p: DistMatrix,
    c_alloc: AllocatedMatrix,
    rr: RemoteRows,
    ctx: RankContext,
) -> LocalMatrix:
    """Numeric pass of C~ = A*P into the symbolic allocation.

    The only communication is the values-only refresh of the gathered rows.
    """
    if ctx.nranks > 1:
        update_remote_rows_numeric(ctx, rr, p)
    c_alloc.reset_fill()
    cl = c_alloc.local
    err, acc_cap = _k.ap_numeric_driver(
        *_kernel_args_numeric(a.local, p.local, rr),
        cl.diag.row_offsets, cl.diag.col_indices, cl.diag.values, c_alloc.fill_d,
        cl.offdiag.row_offsets, cl.offdiag.col_indices, cl.offdiag.values,
        c_alloc.fill_o, cl.col_map,
        cl.col_lo, cl.col_hi,
        a.local.nrows,
    )
    if err >= 0:
        raise StructuralDriftError(
            f"numeric row {err} of A*P does not match the symbolic structure"
        )
    _ledger_transient_peak(ctx.ledger, acc_cap * RowAccumulator.BYTES_PER_SLOT)
    c_alloc.verify_filled("A*P")
    return cl
