"""Deterministic problem generators and the sequential dense oracle.

The model problem mimics a geometric two-level hierarchy: a 3D structured
coarse grid, a fine grid obtained by uniform refinement (keeping endpoints,
so 2n-1 points per dimension), a 27-point graph Laplacian on the fine grid,
and trilinear coarse-to-fine interpolation.  Grid points are ordered
lexicographically with x fastest, so contiguous block rows are z-slabs.

Every generator builds only the rows a rank owns, from global indices
alone, so assembled matrices are bitwise independent of the rank count.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import SizeCapError
from .partition import DistMatrix, RowPartition, dist_from_global, make_partition, split_local
from .sparse import CsrMatrix

ORACLE_SIZE_CAP = 2000


@dataclass(frozen=True)
class GridSpec:
    """Coarse-grid points per dimension; the fine grid has 2n-1 per dimension."""

    nx: int
    ny: int
    nz: int

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz) < 2:
            raise ValueError("each grid dimension needs at least 2 points")

    @property
    def fine_dims(self) -> tuple[int, int, int]:
        return 2 * self.nx - 1, 2 * self.ny - 1, 2 * self.nz - 1


def grid_dims(g: GridSpec) -> tuple[int, int]:
    """(fine unknowns, coarse unknowns) by integer arithmetic."""
    fx, fy, fz = g.fine_dims
    return fx * fy * fz, g.nx * g.ny * g.nz


def _coords(ids: np.ndarray, nx: int, ny: int):
    ix = ids % nx
    rest = ids // nx
    return ix, rest % ny, rest // ny


def build_model_operator(g: GridSpec, part: RowPartition, rank: int) -> DistMatrix:
    """27-point graph Laplacian on the fine grid: -1 to each lattice
    neighbor, diagonal equal to the neighbor count (rows sum to zero)."""
    fx, fy, fz = g.fine_dims
    n_fine = fx * fy * fz
    if part.nglobal != n_fine:
        raise ValueError(f"partition covers {part.nglobal} rows, fine grid has {n_fine}")
    lo, hi = part.owned_range(rank)
    ids = np.arange(lo, hi, dtype=np.int64)
    ix, iy, iz = _coords(ids, fx, fy)
    rows = [ids - lo]
    cols = [ids]
    vals = [np.zeros(ids.shape[0])]  # placeholder for the diagonal
    degree = np.zeros(ids.shape[0], np.int64)
    for dx, dy, dz in product((-1, 0, 1), repeat=3):
        if dx == dy == dz == 0:
            continue
        jx, jy, jz = ix + dx, iy + dy, iz + dz
        ok = (jx >= 0) & (jx < fx) & (jy >= 0) & (jy < fy) & (jz >= 0) & (jz < fz)
        degree += ok
        rows.append(ids[ok] - lo)
        cols.append(jx[ok] + fx * (jy[ok] + fy * jz[ok]))
        vals.append(np.full(int(ok.sum()), -1.0))
    vals[0] = degree.astype(np.float64)
    local_rows = CsrMatrix.from_triplets(
        hi - lo, n_fine, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    )
    return DistMatrix(part, part, rank, split_local(rank, local_rows, part, part))


def build_interpolation(
    g: GridSpec, fine_part: RowPartition, coarse_part: RowPartition, rank: int
) -> DistMatrix:
    """Trilinear coarse-to-fine interpolation; every row sums to 1 exactly
    (weights are 1, 1/2, 1/4, or 1/8 depending on how many odd coordinates
    the fine point has)."""
    fx, fy, _ = g.fine_dims
    n_fine, n_coarse = grid_dims(g)
    if fine_part.nglobal != n_fine or coarse_part.nglobal != n_coarse:
        raise ValueError("partition sizes do not match the grid")
    lo, hi = fine_part.owned_range(rank)
    ids = np.arange(lo, hi, dtype=np.int64)
    ix, iy, iz = _coords(ids, fx, fy)
    bx_, by_, bz_ = ix // 2, iy // 2, iz // 2
    rx, ry, rz = ix % 2, iy % 2, iz % 2
    weight = np.ldexp(1.0, -(rx + ry + rz))
    rows = []
    cols = []
    vals = []
    for ox, oy, oz in product((0, 1), repeat=3):
        ok = (rx >= ox) & (ry >= oy) & (rz >= oz)
        cx, cy, cz = bx_[ok] + ox, by_[ok] + oy, bz_[ok] + oz
        rows.append(ids[ok] - lo)
        cols.append(cx + g.nx * (cy + g.ny * cz))
        vals.append(weight[ok])
    local_rows = CsrMatrix.from_triplets(
        hi - lo, n_coarse, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    )
    return DistMatrix(
        fine_part, coarse_part, rank, split_local(rank, local_rows, fine_part, coarse_part)
    )


def model_problem(g: GridSpec, nranks: int, rank: int) -> tuple[DistMatrix, DistMatrix]:
    """This rank's share of (A, P) for the model problem under block rows."""
    n_fine, n_coarse = grid_dims(g)
    fine_part = make_partition(n_fine, nranks)
    coarse_part = make_partition(n_coarse, nranks)
    a = build_model_operator(g, fine_part, rank)
    p = build_interpolation(g, fine_part, coarse_part, rank)
    return a, p


def random_instance(n: int, m: int, density: float, seed: int) -> tuple[CsrMatrix, CsrMatrix]:
    """Reproducible random (A, P): Bernoulli structure at the given density,
    values uniform in [-1, 1], and a forced nonzero diagonal on A."""
    if not 0 < density <= 1:
        raise ValueError("density must be in (0, 1]")
    rng = np.random.default_rng(seed)
    mask_a = rng.random((n, n)) < density
    np.fill_diagonal(mask_a, True)
    vals_a = rng.uniform(-1.0, 1.0, (n, n))
    mask_p = rng.random((n, m)) < density
    vals_p = rng.uniform(-1.0, 1.0, (n, m))
    ar, ac = np.nonzero(mask_a)
    pr, pc = np.nonzero(mask_p)
    a = CsrMatrix.from_triplets(n, n, ar, ac, vals_a[ar, ac])
    p = CsrMatrix.from_triplets(n, m, pr, pc, vals_p[pr, pc])
    return a, p


def distribute(a: CsrMatrix, p: CsrMatrix, nranks: int, rank: int):
    """Split a global (A, P) pair into one rank's distributed operands."""
    row_part = make_partition(a.nrows, nranks)
    col_part = make_partition(p.ncols, nranks)
    return (
        dist_from_global(a, row_part, row_part, rank),
        dist_from_global(p, row_part, col_part, rank),
    )


def _as_dense(m) -> np.ndarray:
    if isinstance(m, CsrMatrix):
        return m.to_dense()
    return np.asarray(m, dtype=np.float64)


def oracle_ptap(a, p) -> np.ndarray:
    """Sequential dense triple product: the verification oracle.

    Full dense arithmetic with no sparsity shortcuts; refuses inputs past
    the size cap so it cannot silently dominate a benchmark run.
    """
    ad = _as_dense(a)
    pd_ = _as_dense(p)
    n = ad.shape[0]
    m = pd_.shape[1]
    if max(n, m, pd_.shape[0]) > ORACLE_SIZE_CAP:
        raise SizeCapError(
            f"oracle limited to dimensions <= {ORACLE_SIZE_CAP}, got {n}x{m}"
        )
    if ad.shape != (n, n) or pd_.shape[0] != n:
        raise ValueError("A must be n x n and P must be n x m")
    return pd_.T @ (ad @ pd_)
