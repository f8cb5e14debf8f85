import numpy as np
import pytest

from ptap import (
    CsrMatrix,
    GridSpec,
    SizeCapError,
    assemble_global,
    build_interpolation,
    build_model_operator,
    grid_dims,
    make_partition,
    model_problem,
    oracle_ptap,
    random_instance,
    spawn_ranks,
)


def test_grid_dims_billion_scale():
    assert grid_dims(GridSpec(1000, 1000, 1000)) == (7_988_005_999, 1_000_000_000)
    assert grid_dims(GridSpec(1500, 1500, 1500)) == (26_973_008_999, 3_375_000_000)


def test_grid_dims_tiny():
    assert grid_dims(GridSpec(2, 2, 2)) == (27, 8)


def test_grid_rejects_degenerate():
    with pytest.raises(ValueError):
        GridSpec(1, 2, 2)


def _global_model(g, nranks=1):
    def prog(ctx):
        a, p = model_problem(g, ctx.nranks, ctx.rank)
        return a.local, p.local

    res = spawn_ranks(nranks, prog)
    n_fine, n_coarse = grid_dims(g)
    a = assemble_global([r[0] for r in res], ncols=n_fine)
    p = assemble_global([r[1] for r in res], ncols=n_coarse)
    return a, p


def test_stencil_corner_and_interior():
    g = GridSpec(3, 3, 3)  # fine grid 5x5x5
    a, _ = _global_model(g)
    d = a.to_dense()
    assert d[0, 0] == 7.0  # corner: 7 neighbors
    fx = 5
    center = 2 + fx * (2 + fx * 2)
    assert d[center, center] == 26.0
    assert (d[center] == -1.0).sum() == 26
    assert np.abs(d.sum(axis=1)).max() == 0.0


def test_operator_symmetric():
    a, _ = _global_model(GridSpec(2, 3, 2))
    d = a.to_dense()
    assert np.array_equal(d, d.T)


def test_interpolation_injection_and_midpoint():
    g = GridSpec(3, 2, 2)
    _, p = _global_model(g)
    d = p.to_dense()
    # fine point (0,0,0) coincides with coarse point 0
    assert d[0, 0] == 1.0 and d[0].sum() == 1.0 and (d[0] != 0).sum() == 1
    # fine point (1,0,0) is the edge midpoint between coarse 0 and 1
    assert d[1, 0] == 0.5 and d[1, 1] == 0.5 and (d[1] != 0).sum() == 2


def test_interpolation_rows_sum_to_one_max_eight():
    g = GridSpec(3, 3, 3)
    _, p = _global_model(g)
    d = p.to_dense()
    assert np.all(d.sum(axis=1) == 1.0)  # exact in floating point
    widths = (d != 0).sum(axis=1)
    assert widths.max() == 8
    assert set(np.unique(widths)) <= {1, 2, 4, 8}


def test_generators_independent_of_rank_count():
    g = GridSpec(3, 2, 3)
    a1, p1 = _global_model(g, nranks=1)
    for nranks in (2, 4, 7):
        a, p = _global_model(g, nranks=nranks)
        assert a.structure_equal(a1) and np.array_equal(a.values, a1.values)
        assert p.structure_equal(p1) and np.array_equal(p.values, p1.values)


def test_random_instance_deterministic():
    a1, p1 = random_instance(50, 20, 0.2, seed=7)
    a2, p2 = random_instance(50, 20, 0.2, seed=7)
    assert a1.structure_equal(a2) and np.array_equal(a1.values, a2.values)
    assert p1.structure_equal(p2) and np.array_equal(p1.values, p2.values)


def test_random_instance_density_bound():
    a, p = random_instance(50, 20, 0.2, seed=7)
    assert 0.1 * 50 * 20 <= p.nnz <= 0.3 * 50 * 20
    assert 0.1 * 50 * 50 <= a.nnz <= 0.3 * 50 * 50 + 50
    # diagonal forced nonzero
    d = a.to_dense()
    assert np.all(np.diag(d) != 0)
    assert np.abs(a.values).max() <= 1.0


def test_random_instance_full_density():
    a, p = random_instance(10, 6, 1.0, seed=1)
    assert a.nnz == 100 and p.nnz == 60


def test_oracle_identity_returns_a():
    a, _ = random_instance(12, 12, 0.3, seed=2)
    c = oracle_ptap(a, CsrMatrix.identity(12))
    assert np.allclose(c, a.to_dense())


def test_oracle_hand_value():
    a = np.array([[2.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 2.0]])
    p = np.array([[0.5], [1.0], [0.5]])
    c = oracle_ptap(a, p)
    assert c.shape == (1, 1)
    assert c[0, 0] == pytest.approx(1.0, abs=1e-15)


def test_oracle_symmetry_self_check():
    rng = np.random.default_rng(3)
    base = rng.uniform(-1, 1, (10, 10))
    sym = base + base.T
    p = rng.uniform(-1, 1, (10, 4))
    c = oracle_ptap(sym, p)
    assert np.allclose(c, c.T)


def test_oracle_size_cap():
    with pytest.raises(SizeCapError):
        oracle_ptap(np.eye(2001), np.ones((2001, 1)))


def test_operator_partition_size_check():
    with pytest.raises(ValueError):
        build_model_operator(GridSpec(2, 2, 2), make_partition(10, 2), 0)
    with pytest.raises(ValueError):
        build_interpolation(GridSpec(2, 2, 2), make_partition(27, 2), make_partition(7, 2), 0)
