import numpy as np
import pytest

from ptap import (
    CsrMatrix,
    assemble_global,
    csr_from_triplets,
    distribute,
    ptap,
    spawn_ranks,
)

# The 6x6 / 6x4 toy patterns used throughout (unit values unless changed).
A_ENTRIES = [
    (0, 0, 1.0), (0, 1, 1.0), (0, 4, 1.0),
    (1, 1, 1.0), (1, 2, 1.0), (1, 4, 1.0),
    (2, 0, 1.0), (2, 3, 1.0), (2, 4, 1.0),
    (3, 1, 1.0), (3, 3, 1.0),
    (4, 3, 1.0), (4, 4, 1.0),
    (5, 1, 1.0), (5, 4, 1.0), (5, 5, 1.0),
]
P_ENTRIES = [
    (0, 0, 1.0), (0, 3, 1.0),
    (1, 1, 1.0),
    (2, 2, 1.0), (2, 3, 1.0),
    (3, 2, 1.0),
    (4, 1, 1.0), (4, 3, 1.0),
    (5, 2, 1.0),
]
C_PATTERN = [[0, 1, 3], [1, 2, 3], [0, 1, 2, 3], [1, 2], [1, 2, 3], [1, 2, 3]]


@pytest.fixture
def toy_a():
    return csr_from_triplets(6, 6, A_ENTRIES)


@pytest.fixture
def toy_p():
    return csr_from_triplets(6, 4, P_ENTRIES)


def rel_err(got: np.ndarray, want: np.ndarray) -> float:
    scale = max(np.abs(want).max(initial=0.0), 1e-300)
    return float(np.abs(got - want).max(initial=0.0) / scale)


def run_ptap(a_glob, p_glob, nranks, algorithm, cache="keep", scheduler="sequential", trace=None):
    """Distribute, run one symbolic + one numeric pass, assemble C."""

    def prog(ctx):
        a, p = distribute(a_glob, p_glob, ctx.nranks, ctx.rank)
        c, plan = ptap(a, p, algorithm, ctx, cache=cache)
        return c.local, plan, ctx.ledger.snapshot()

    results = spawn_ranks(nranks, prog, scheduler=scheduler, trace=trace)
    c = assemble_global([r[0] for r in results], ncols=p_glob.ncols)
    return c, results


def dense_random(n, m, density, seed) -> tuple[CsrMatrix, CsrMatrix, np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    ad = (rng.random((n, n)) < density) * rng.uniform(-1, 1, (n, n))
    np.fill_diagonal(ad, rng.uniform(0.5, 1.0, n))
    pd = (rng.random((n, m)) < density) * rng.uniform(-1, 1, (n, m))
    ar, ac = np.nonzero(ad)
    pr, pc = np.nonzero(pd)
    a = CsrMatrix.from_triplets(n, n, ar, ac, ad[ar, ac])
    p = CsrMatrix.from_triplets(n, m, pr, pc, pd[pr, pc])
    return a, p, ad, pd
