"""Matrix Market coordinate format I/O for CsrMatrix.

Real general matrices only; indices are 1-based on disk and 0-based in
memory.  Values are written with 17 significant digits so a write/read
round trip reproduces every float64 bit-exactly.
"""

from __future__ import annotations

import numpy as np

from .errors import MatrixMarketError
from .sparse import CsrMatrix

_BANNER = "%%MatrixMarket"


def write_matrix_market(path, m: CsrMatrix) -> None:
    rows, cols, vals = m.to_triplets()
    if vals is None:
        vals = np.ones(rows.shape[0])
    with open(path, "w") as f:
        f.write("%%MatrixMarket matrix coordinate real general\n")
        f.write(f"{m.nrows} {m.ncols} {m.nnz}\n")
        for r, c, v in zip(rows, cols, vals):
            f.write(f"{r + 1} {c + 1} {v:.17g}\n")


def read_matrix_market(path) -> CsrMatrix:
    with open(path) as f:
        lines = f.readlines()
    if not lines or not lines[0].startswith(_BANNER):
        raise MatrixMarketError("missing MatrixMarket banner", line=1)
    fields = lines[0].split()
    if [s.lower() for s in fields[1:5]] != ["matrix", "coordinate", "real", "general"]:
        raise MatrixMarketError(f"unsupported header {lines[0].strip()!r}", line=1)
    lineno = 1
    sizes = None
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    for lineno, line in enumerate(lines[1:], start=2):
        s = line.strip()
        if not s or s.startswith("%"):
            continue
        parts = s.split()
        if sizes is None:
            if len(parts) != 3:
                raise MatrixMarketError("size line must be 'nrows ncols nnz'", line=lineno)
            try:
                sizes = tuple(int(p) for p in parts)
            except ValueError:
                raise MatrixMarketError(f"bad size line {s!r}", line=lineno) from None
            continue
        if len(parts) != 3:
            raise MatrixMarketError(f"entry must be 'row col value', got {s!r}", line=lineno)
        try:
            rows.append(int(parts[0]) - 1)
            cols.append(int(parts[1]) - 1)
            vals.append(float(parts[2]))
        except ValueError:
            raise MatrixMarketError(f"bad entry {s!r}", line=lineno) from None
    if sizes is None:
        raise MatrixMarketError("missing size line", line=lineno)
    nrows, ncols, nnz = sizes
    if len(rows) != nnz:
        raise MatrixMarketError(
            f"header promises {nnz} entries but file has {len(rows)}", line=lineno
        )
    try:
        return CsrMatrix.from_triplets(nrows, ncols, rows, cols, vals)
    except Exception as exc:
        raise MatrixMarketError(str(exc)) from exc
