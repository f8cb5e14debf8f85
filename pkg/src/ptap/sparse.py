"""Sequential sparse-matrix storage and hash-based per-row accumulators.

``CsrMatrix`` is the storage unit for every matrix block in the package:
diagonal and off-diagonal blocks of distributed matrices, gathered remote
rows, and assembled results.  Structure arrays are frozen after
construction; the value array stays writable so numeric passes can refresh
values in place without touching structure.

``RowSet`` and ``RowAccumulator`` wrap the open-addressing tables from
``_kernels``: power-of-two capacity, linear probing, geometric growth, and
a ``clear`` that never releases capacity so the same table can be reused
row after row.
"""

from __future__ import annotations

from typing import Iterable, NamedTuple

import numpy as np

from . import _kernels as _k
from .errors import AssemblyError


class Triplet(NamedTuple):
    row: int
    col: int
    val: float


def _as_int64(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.int64)


def _as_f64(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


class CsrMatrix:
    """Compressed sparse row matrix; ``values`` is None for symbolic-only use.

    Invariants: ``row_offsets`` is nondecreasing with ``row_offsets[0] == 0``
    and ``row_offsets[nrows] == nnz``; column indices are strictly increasing
    within each row and lie in ``[0, ncols)``.
    """

    __slots__ = ("nrows", "ncols", "row_offsets", "col_indices", "values")

    def __init__(self, nrows, ncols, row_offsets, col_indices, values=None, check=True):
        self.nrows = int(nrows)
        self.ncols = int(ncols)
        self.row_offsets = _as_int64(row_offsets)
        self.col_indices = _as_int64(col_indices)
        self.values = None if values is None else _as_f64(values)
        if check:
            self._validate()
        self.row_offsets.flags.writeable = False
        self.col_indices.flags.writeable = False

    def _validate(self):
        ip = self.row_offsets
        if ip.shape[0] != self.nrows + 1 or ip[0] != 0:
            raise AssemblyError("row_offsets must have length nrows+1 and start at 0")
        if np.any(np.diff(ip) < 0) or ip[-1] != self.col_indices.shape[0]:
            raise AssemblyError("row_offsets must be nondecreasing and end at nnz")
        if self.values is not None and self.values.shape[0] != self.nnz:
            raise AssemblyError("values length must equal nnz")
        j = self.col_indices
        if j.shape[0]:
            if j.min() < 0 or j.max() >= self.ncols:
                raise AssemblyError("column index out of range")
            inrow = np.ones(j.shape[0], bool)
            inrow[ip[1:-1]] = False
            if np.any((np.diff(j) <= 0) & inrow[1:]):
                raise AssemblyError("columns must be strictly increasing within each row")

    # -- construction -----------------------------------------------------

    @classmethod
    def from_triplets(cls, nrows, ncols, rows, cols, vals=None) -> "CsrMatrix":
        rows = _as_int64(rows)
        cols = _as_int64(cols)
        if vals is not None:
            vals = _as_f64(vals)
        bad = np.nonzero((rows < 0) | (rows >= nrows) | (cols < 0) | (cols >= ncols))[0]
        if bad.size:
            b = bad[0]
            v = vals[b] if vals is not None else None
            raise AssemblyError(
                f"triplet #{b} (row={rows[b]}, col={cols[b]}, val={v}) "
                f"out of range for a {nrows}x{ncols} matrix"
            )
        order = np.lexsort((cols, rows))
        rows = rows[order]
        cols = cols[order]
        if rows.size:
            fresh = np.empty(rows.size, bool)
            fresh[0] = True
            fresh[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
            starts = np.nonzero(fresh)[0]
            urows = rows[starts]
            ucols = cols[starts]
            uvals = None
            if vals is not None:
                uvals = np.add.reduceat(vals[order], starts)
        else:
            urows = rows
            ucols = cols
            uvals = None if vals is None else vals
        ip = np.zeros(nrows + 1, np.int64)
        np.add.at(ip, urows + 1, 1)
        np.cumsum(ip, out=ip)
        return cls(nrows, ncols, ip, ucols, uvals, check=False)

    @classmethod
    def identity(cls, n) -> "CsrMatrix":
        return cls(n, n, np.arange(n + 1), np.arange(n), np.ones(n))

    @classmethod
    def empty(cls, nrows, ncols, with_values=True) -> "CsrMatrix":
        vals = np.zeros(0) if with_values else None
        return cls(nrows, ncols, np.zeros(nrows + 1, np.int64), np.zeros(0, np.int64), vals)

    # -- views and derived forms ------------------------------------------

    @property
    def nnz(self) -> int:
        return int(self.row_offsets[-1])

    @property
    def nbytes(self) -> int:
        """Bytes of index and value storage (the ledger's unit of account)."""
        n = self.row_offsets.nbytes + self.col_indices.nbytes
        if self.values is not None:
            n += self.values.nbytes
        return n

    def row_cols(self, i) -> np.ndarray:
        return self.col_indices[self.row_offsets[i] : self.row_offsets[i + 1]]

    def row_values(self, i) -> np.ndarray:
        return self.values[self.row_offsets[i] : self.row_offsets[i + 1]]

    def to_triplets(self):
        rows = np.repeat(np.arange(self.nrows, dtype=np.int64), np.diff(self.row_offsets))
        return rows, self.col_indices.copy(), None if self.values is None else self.values.copy()

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.nrows, self.ncols))
        rows, cols, vals = self.to_triplets()
        out[rows, cols] = 1.0 if vals is None else vals
        return out

    def matvec(self, x) -> np.ndarray:
        x = _as_f64(x)
        rows = np.repeat(np.arange(self.nrows, dtype=np.int64), np.diff(self.row_offsets))
        out = np.zeros(self.nrows)
        np.add.at(out, rows, self.values * x[self.col_indices])
        return out

    def transpose(self) -> "CsrMatrix":
        t, _ = self.transpose_with_permutation()
        return t

    def transpose_with_permutation(self):
        """Transpose plus the permutation mapping self.values to its values.

        The permutation lets a numeric pass refresh an already-built
        transpose as ``t.values[:] = m.values[perm]``.
        """
        rows, cols, _ = self.to_triplets()
        perm = np.argsort(cols, kind="stable")
        ip = np.zeros(self.ncols + 1, np.int64)
        np.add.at(ip, cols + 1, 1)
        np.cumsum(ip, out=ip)
        tvals = None if self.values is None else self.values[perm]
        t = CsrMatrix(self.ncols, self.nrows, ip, rows[perm], tvals, check=False)
        return t, perm

    def copy_structure(self, zero_values=True) -> "CsrMatrix":
        vals = np.zeros(self.nnz) if zero_values else None
        return CsrMatrix(self.nrows, self.ncols, self.row_offsets, self.col_indices, vals, check=False)

    def structure_equal(self, other: "CsrMatrix") -> bool:
        return (
            self.nrows == other.nrows
            and self.ncols == other.ncols
            and np.array_equal(self.row_offsets, other.row_offsets)
            and np.array_equal(self.col_indices, other.col_indices)
        )

    def __repr__(self):
        kind = "symbolic" if self.values is None else "numeric"
        return f"CsrMatrix({self.nrows}x{self.ncols}, nnz={self.nnz}, {kind})"


def csr_from_triplets(nrows: int, ncols: int, entries: Iterable) -> CsrMatrix:
    """Assemble a CSR matrix from (row, col, val) entries; duplicates sum."""
    entries = list(entries)
    if not entries:
        return CsrMatrix.empty(nrows, ncols)
    rows = [e[0] for e in entries]
    cols = [e[1] for e in entries]
    vals = [e[2] for e in entries]
    return CsrMatrix.from_triplets(nrows, ncols, rows, cols, vals)


def transpose(m: CsrMatrix) -> CsrMatrix:
    return m.transpose()


def relative_difference(a: CsrMatrix, b: CsrMatrix) -> float:
    """Max absolute entry difference scaled by the larger matrix magnitude."""
    da, db = a.to_dense(), b.to_dense()
    scale = max(np.abs(da).max(initial=0.0), np.abs(db).max(initial=0.0), 1e-300)
    return float(np.abs(da - db).max(initial=0.0) / scale)


def _round_up_pow2(n: int) -> int:
    c = 8
    while c < n:
        c *= 2
    return c


class RowSet:
    """Hash set of column indices with capacity that survives ``clear``."""

    __slots__ = ("_keys", "_size", "_ledger")

    BYTES_PER_SLOT = 8

    def __init__(self, capacity: int = 16, ledger=None):
        self._keys = _k.hs_new(_round_up_pow2(capacity))
        self._size = 0
        self._ledger = ledger
        if ledger is not None:
            ledger.add("transient_hash_peak", self.nbytes)

    @property
    def capacity(self) -> int:
        return self._keys.shape[0]

    @property
    def nbytes(self) -> int:
        return self.capacity * self.BYTES_PER_SLOT

    def insert(self, j: int) -> bool:
        if j < 0:
            raise ValueError("column indices must be non-negative")
        before = self.nbytes
        self._keys, self._size, inserted = _k.hs_insert(self._keys, self._size, j)
        if self._ledger is not None and self.nbytes != before:
            self._ledger.release("transient_hash_peak", before)
            self._ledger.add("transient_hash_peak", self.nbytes)
        return bool(inserted)

    def __contains__(self, j) -> bool:
        return bool(_k.hs_contains(self._keys, j))

    def __len__(self) -> int:
        return self._size

    def clear(self):
        self._keys[:] = -1
        self._size = 0

    def drain_sorted(self) -> np.ndarray:
        return _k.hs_drain(self._keys, self._size)

    def free(self):
        if self._ledger is not None:
            self._ledger.release("transient_hash_peak", self.nbytes)
            self._ledger = None
        self._keys = _k.hs_new(8)
        self._size = 0


class RowAccumulator:
    """Hash map column index -> value with ``+=`` add semantics."""

    __slots__ = ("_keys", "_vals", "_size", "_ledger")

    BYTES_PER_SLOT = 16

    def __init__(self, capacity: int = 16, ledger=None):
        cap = _round_up_pow2(capacity)
        self._keys = _k.hs_new(cap)
        self._vals = _k.hm_new_vals(cap)
        self._size = 0
        self._ledger = ledger
        if ledger is not None:
            ledger.add("transient_hash_peak", self.nbytes)

    @property
    def capacity(self) -> int:
        return self._keys.shape[0]

    @property
    def nbytes(self) -> int:
        return self.capacity * self.BYTES_PER_SLOT

    def add(self, j: int, v: float):
        if j < 0:
            raise ValueError("column indices must be non-negative")
        before = self.nbytes
        self._keys, self._vals, self._size = _k.hm_add(self._keys, self._vals, self._size, j, v)
        if self._ledger is not None and self.nbytes != before:
            self._ledger.release("transient_hash_peak", before)
            self._ledger.add("transient_hash_peak", self.nbytes)

    def get(self, j: int):
        found, v = _k.hm_get(self._keys, self._vals, j)
        return float(v) if found else None

    def __contains__(self, j) -> bool:
        return bool(_k.hs_contains(self._keys, j))

    def __len__(self) -> int:
        return self._size

    def clear(self):
        self._keys[:] = -1
        self._size = 0

    def drain_sorted(self):
        """(columns, values) with columns strictly ascending."""
        mask = self._keys >= 0
        cols = self._keys[mask]
        vals = self._vals[mask]
        order = np.argsort(cols)
        return cols[order], vals[order]

    def free(self):
        if self._ledger is not None:
            self._ledger.release("transient_hash_peak", self.nbytes)
            self._ledger = None
        self._keys = _k.hs_new(8)
        self._vals = _k.hm_new_vals(8)
        self._size = 0
