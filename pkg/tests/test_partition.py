import numpy as np
import pytest

from ptap import (
    CsrMatrix,
    OwnershipError,
    PartitionMismatchError,
    assemble_global,
    build_neighbor_list,
    csr_from_triplets,
    dist_from_global,
    make_partition,
    owner,
    split_local,
)


@pytest.mark.parametrize(
    "n,np_,want",
    [(6, 3, [0, 2, 4, 6]), (7, 3, [0, 3, 5, 7]), (5, 1, [0, 5]), (3, 5, [0, 1, 2, 3, 3, 3])],
)
def test_make_partition(n, np_, want):
    assert list(make_partition(n, np_).offsets) == want


def test_make_partition_rejects_zero_ranks():
    with pytest.raises(PartitionMismatchError):
        make_partition(5, 0)


def test_partition_sizes_sum():
    for n in (1, 5, 17, 100):
        for np_ in (1, 2, 3, 7, 8):
            part = make_partition(n, np_)
            sizes = np.diff(part.offsets)
            assert sizes.sum() == n
            assert sizes.max() - sizes.min() <= 1


@pytest.mark.parametrize(
    "offsets,i,want", [([0, 2, 4, 6], 4, 2), ([0, 3, 5, 7], 2, 0), ([0, 3, 5, 7], 6, 2)]
)
def test_owner(offsets, i, want):
    from ptap import RowPartition

    assert owner(RowPartition(offsets), i) == want


def test_owner_out_of_range():
    part = make_partition(6, 3)
    with pytest.raises(OwnershipError):
        owner(part, 6)
    with pytest.raises(OwnershipError):
        owner(part, -1)


def test_split_local_toy_rank0(toy_a):
    part = make_partition(6, 3)
    d = dist_from_global(toy_a, part, part, 0)
    lm = d.local
    assert list(lm.col_map) == [2, 4]
    # row 0 hits global col 4; row 1 hits {2, 4}
    assert list(lm.col_map[lm.offdiag.row_cols(0)]) == [4]
    assert list(lm.col_map[lm.offdiag.row_cols(1)]) == [2, 4]
    assert list(lm.diag.row_cols(0)) == [0, 1]
    assert list(lm.diag.row_cols(1)) == [1]


def test_split_block_diagonal_has_empty_offdiag():
    entries = [(i, i, 2.0) for i in range(6)] + [(0, 1, 1.0), (2, 3, 1.0), (4, 5, 1.0)]
    m = csr_from_triplets(6, 6, entries)
    part = make_partition(6, 3)
    for r in range(3):
        lm = dist_from_global(m, part, part, r).local
        assert lm.offdiag.nnz == 0
        assert lm.col_map.size == 0


def test_split_merge_round_trip_random():
    rng = np.random.default_rng(1)
    r = rng.integers(0, 12, 70)
    c = rng.integers(0, 12, 70)
    v = rng.uniform(-1, 1, 70)
    m = CsrMatrix.from_triplets(12, 12, r, c, v)
    for np_ in range(1, 9):
        part = make_partition(12, np_)
        locs = [dist_from_global(m, part, part, rank).local for rank in range(np_)]
        back = assemble_global(locs, ncols=12)
        assert back.structure_equal(m)
        assert np.array_equal(back.values, m.values)


def test_split_local_rejects_wrong_row_count(toy_a):
    part = make_partition(6, 3)
    rows = CsrMatrix.from_triplets(3, 6, [0, 1, 2], [0, 1, 2], [1.0, 1.0, 1.0])
    with pytest.raises(OwnershipError):
        split_local(0, rows, part, part)


def test_neighbor_list_toy(toy_a):
    part = make_partition(6, 3)
    lm = dist_from_global(toy_a, part, part, 0).local
    nl = build_neighbor_list(lm, part)
    assert nl.ranks == [1, 2]
    assert list(nl.rows_by_rank[1]) == [2]
    assert list(nl.rows_by_rank[2]) == [4]


def test_neighbor_list_empty_and_single():
    part = make_partition(6, 3)
    diag_only = csr_from_triplets(6, 6, [(i, i, 1.0) for i in range(6)])
    lm = dist_from_global(diag_only, part, part, 1).local
    assert not build_neighbor_list(lm, part)

    single = csr_from_triplets(6, 6, [(0, 0, 1.0), (0, 4, 1.0), (1, 5, 1.0)])
    lm0 = dist_from_global(single, part, part, 0).local
    nl = build_neighbor_list(lm0, part)
    assert nl.ranks == [2]
    assert list(nl.rows_by_rank[2]) == [4, 5]


def test_neighbor_columns_partition_col_map():
    rng = np.random.default_rng(2)
    m = CsrMatrix.from_triplets(
        16, 16, rng.integers(0, 16, 120), rng.integers(0, 16, 120), rng.uniform(-1, 1, 120)
    )
    part = make_partition(16, 4)
    for rank in range(4):
        lm = dist_from_global(m, part, part, rank).local
        nl = build_neighbor_list(lm, part)
        assert rank not in nl.ranks
        gathered = np.concatenate([nl.rows_by_rank[r] for r in nl.ranks]) if nl.ranks else np.zeros(0)
        assert np.array_equal(np.sort(gathered), lm.col_map)
