"""1D block-row ownership and the diagonal/off-diagonal split of local rows.

A distributed matrix lives as one ``LocalMatrix`` per rank: the rank's rows
split into a diagonal block (columns the rank owns, stored with local
indices) and an off-diagonal block (everything else, stored with compact
indices mapped to global columns through ``col_map``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import OwnershipError, PartitionMismatchError
from .sparse import CsrMatrix, _as_int64


class RowPartition:
    """Ownership map: rank r owns global rows [offsets[r], offsets[r+1])."""

    __slots__ = ("nglobal", "nranks", "offsets")

    def __init__(self, offsets):
        self.offsets = _as_int64(offsets)
        if self.offsets.shape[0] < 2 or self.offsets[0] != 0:
            raise PartitionMismatchError("offsets must start at 0 and cover at least one rank")
        if np.any(np.diff(self.offsets) < 0):
            raise PartitionMismatchError("offsets must be nondecreasing")
        self.nglobal = int(self.offsets[-1])
        self.nranks = self.offsets.shape[0] - 1
        self.offsets.flags.writeable = False

    def owned_range(self, rank: int) -> tuple[int, int]:
        return int(self.offsets[rank]), int(self.offsets[rank + 1])

    def local_size(self, rank: int) -> int:
        lo, hi = self.owned_range(rank)
        return hi - lo

    def __eq__(self, other) -> bool:
        return isinstance(other, RowPartition) and np.array_equal(self.offsets, other.offsets)

    def __hash__(self):
        return hash(self.offsets.tobytes())

    def __repr__(self):
        return f"RowPartition({list(self.offsets)})"


def make_partition(nglobal: int, nranks: int) -> RowPartition:
    """Contiguous block rows; the first nglobal % nranks ranks get one extra."""
    if nranks < 1:
        raise PartitionMismatchError("need at least one rank")
    base, extra = divmod(int(nglobal), nranks)
    sizes = np.full(nranks, base, np.int64)
    sizes[:extra] += 1
    offsets = np.zeros(nranks + 1, np.int64)
    np.cumsum(sizes, out=offsets[1:])
    return RowPartition(offsets)


def owner(part: RowPartition, i: int) -> int:
    """Rank owning global index i."""
    if i < 0 or i >= part.nglobal:
        raise OwnershipError(f"index {i} outside the global range [0, {part.nglobal})")
    return int(np.searchsorted(part.offsets, i, side="right") - 1)


@dataclass
class LocalMatrix:
    """One rank's rows: diagonal block, off-diagonal block, and column map.

    ``diag`` uses local column indices over [col_lo, col_hi); ``offdiag``
    uses compact indices into ``col_map`` (strictly increasing global
    columns outside the owned range).
    """

    row_lo: int
    row_hi: int
    col_lo: int
    col_hi: int
    diag: CsrMatrix
    offdiag: CsrMatrix
    col_map: np.ndarray

    @property
    def nrows(self) -> int:
        return self.row_hi - self.row_lo

    @property
    def nnz(self) -> int:
        return self.diag.nnz + self.offdiag.nnz

    @property
    def nbytes(self) -> int:
        return self.diag.nbytes + self.offdiag.nbytes + self.col_map.nbytes

    def to_global_rows(self) -> CsrMatrix:
        """Merge diag and offdiag back into global-column CSR rows."""
        n = self.nrows
        counts = np.diff(self.diag.row_offsets) + np.diff(self.offdiag.row_offsets)
        ip = np.zeros(n + 1, np.int64)
        np.cumsum(counts, out=ip[1:])
        cols = np.empty(ip[-1], np.int64)
        has_vals = self.diag.values is not None and self.offdiag.values is not None
        vals = np.empty(ip[-1]) if has_vals else None
        for i in range(n):
            gd = self.diag.row_cols(i) + self.col_lo
            go = self.col_map[self.offdiag.row_cols(i)]
            merged = np.concatenate((gd, go))
            order = np.argsort(merged)
            cols[ip[i] : ip[i + 1]] = merged[order]
            if has_vals:
                mv = np.concatenate((self.diag.row_values(i), self.offdiag.row_values(i)))
                vals[ip[i] : ip[i + 1]] = mv[order]
        ncols_global = max(
            self.col_hi, int(self.col_map.max()) + 1 if self.col_map.size else 0
        )
        return CsrMatrix(self.nrows, ncols_global, ip, cols, vals, check=False)


def split_local(
    rank: int, rows: CsrMatrix, row_part: RowPartition, col_part: RowPartition
) -> LocalMatrix:
    """Split a rank's global-column rows into diagonal/off-diagonal blocks.

    ``rows`` must hold exactly the rank's owned rows (row i of ``rows`` is
    global row row_lo + i) with global column indices.
    """
    row_lo, row_hi = row_part.owned_range(rank)
    if rows.nrows != row_hi - row_lo:
        raise OwnershipError(
            f"rank {rank} owns {row_hi - row_lo} rows but got {rows.nrows}"
        )
    if rows.ncols > col_part.nglobal:
        raise PartitionMismatchError("rows wider than the column partition")
    col_lo, col_hi = col_part.owned_range(rank)
    cols = rows.col_indices
    in_diag = (cols >= col_lo) & (cols < col_hi)
    row_ids = np.repeat(np.arange(rows.nrows, dtype=np.int64), np.diff(rows.row_offsets))

    def build(mask, ncols, colxform):
        ip = np.zeros(rows.nrows + 1, np.int64)
        np.add.at(ip, row_ids[mask] + 1, 1)
        np.cumsum(ip, out=ip)
        vals = None if rows.values is None else rows.values[mask]
        return CsrMatrix(rows.nrows, ncols, ip, colxform(cols[mask]), vals, check=False)

    diag = build(in_diag, col_hi - col_lo, lambda c: c - col_lo)
    off_cols = cols[~in_diag]
    col_map = np.unique(off_cols)
    offdiag = build(~in_diag, col_map.shape[0], lambda c: np.searchsorted(col_map, c))
    return LocalMatrix(row_lo, row_hi, col_lo, col_hi, diag, offdiag, col_map)


@dataclass
class NeighborList:
    """Ranks this rank needs remote rows from, with the rows per rank."""

    ranks: list[int] = field(default_factory=list)
    rows_by_rank: dict[int, np.ndarray] = field(default_factory=dict)

    def __bool__(self):
        return bool(self.ranks)


def build_neighbor_list(m: LocalMatrix, col_part: RowPartition) -> NeighborList:
    """Group the off-diagonal column map by owning rank under col_part."""
    nl = NeighborList()
    if m.col_map.size == 0:
        return nl
    owners = np.searchsorted(col_part.offsets, m.col_map, side="right") - 1
    for r in np.unique(owners):
        nl.ranks.append(int(r))
        nl.rows_by_rank[int(r)] = m.col_map[owners == r]
    return nl


@dataclass
class DistMatrix:
    """A 1D row-partitioned matrix as seen from one rank."""

    row_part: RowPartition
    col_part: RowPartition
    rank: int
    local: LocalMatrix

    @property
    def nrows(self) -> int:
        return self.row_part.nglobal

    @property
    def ncols(self) -> int:
        return self.col_part.nglobal


def dist_from_global(
    m: CsrMatrix, row_part: RowPartition, col_part: RowPartition, rank: int
) -> DistMatrix:
    """Slice a sequential matrix into one rank's LocalMatrix."""
    if m.nrows != row_part.nglobal or m.ncols != col_part.nglobal:
        raise PartitionMismatchError(
            f"matrix is {m.nrows}x{m.ncols} but partitions cover "
            f"{row_part.nglobal}x{col_part.nglobal}"
        )
    lo, hi = row_part.owned_range(rank)
    a, b = m.row_offsets[lo], m.row_offsets[hi]
    ip = (m.row_offsets[lo : hi + 1] - a).astype(np.int64)
    vals = None if m.values is None else m.values[a:b]
    rows = CsrMatrix(hi - lo, m.ncols, ip, m.col_indices[a:b], vals, check=False)
    return DistMatrix(row_part, col_part, rank, split_local(rank, rows, row_part, col_part))


def assemble_global(locals_: list[LocalMatrix], ncols: int | None = None) -> CsrMatrix:
    """Stack per-rank local matrices (ordered by rank) into one matrix."""
    parts = [lm.to_global_rows() for lm in sorted(locals_, key=lambda lm: lm.row_lo)]
    nrows = sum(p.nrows for p in parts)
    if ncols is None:
        ncols = max((p.ncols for p in parts), default=0)
    ip = np.zeros(nrows + 1, np.int64)
    pos = 0
    chunks_j = []
    chunks_v = []
    has_vals = all(p.values is not None for p in parts)
    for p in parts:
        ip[pos + 1 : pos + p.nrows + 1] = ip[pos] + p.row_offsets[1:]
        pos += p.nrows
        chunks_j.append(p.col_indices)
        if has_vals:
            chunks_v.append(p.values)
    cols = np.concatenate(chunks_j) if chunks_j else np.zeros(0, np.int64)
    vals = np.concatenate(chunks_v) if has_vals and chunks_v else None
    return CsrMatrix(nrows, ncols, ip, cols, vals, check=False)
