import numpy as np
import pytest

from ptap import AssemblyError, CsrMatrix, MemoryLedger, RowAccumulator, RowSet, csr_from_triplets, transpose


def test_duplicate_triplets_sum():
    m = csr_from_triplets(2, 2, [(0, 0, 1.0), (0, 0, 2.0)])
    assert m.nnz == 1
    assert m.values[0] == 3.0


def test_toy_p_row_offsets(toy_p):
    assert list(toy_p.row_offsets) == [0, 2, 3, 5, 6, 8, 9]


def test_empty_matrix():
    m = csr_from_triplets(3, 3, [])
    assert list(m.row_offsets) == [0, 0, 0, 0]
    assert m.nnz == 0


def test_out_of_range_triplet_named():
    with pytest.raises(AssemblyError, match=r"triplet #1 \(row=0, col=7"):
        csr_from_triplets(2, 2, [(0, 0, 1.0), (0, 7, 2.0)])


def test_explicit_zeros_kept():
    m = csr_from_triplets(2, 2, [(0, 1, 0.0), (1, 1, -1.0), (1, 1, 1.0)])
    assert m.nnz == 2
    assert list(m.values) == [0.0, 0.0]


def test_round_trip_triplets():
    rng = np.random.default_rng(0)
    rows = rng.integers(0, 9, 60)
    cols = rng.integers(0, 7, 60)
    vals = rng.uniform(-1, 1, 60)
    m = CsrMatrix.from_triplets(9, 7, rows, cols, vals)
    rr, cc, vv = m.to_triplets()
    # independent reference: accumulate into a dense table
    want = np.zeros((9, 7))
    np.add.at(want, (rows, cols), vals)
    got = np.zeros((9, 7))
    got[rr, cc] = vv
    keep = want != 0
    assert np.allclose(got[keep], want[keep])
    # rows sorted by column
    for i in range(9):
        assert np.all(np.diff(m.row_cols(i)) > 0)


def test_transpose_identity():
    m = CsrMatrix.identity(3)
    t = transpose(m)
    assert t.structure_equal(m)
    assert np.array_equal(t.values, m.values)


def test_transpose_toy_p_column_three(toy_p):
    t = transpose(toy_p)
    assert t.nrows == 4 and t.ncols == 6
    assert list(t.row_cols(3)) == [0, 2, 4]


def test_transpose_against_entry_swap_oracle():
    rng = np.random.default_rng(7)
    mask = rng.random((8, 5)) < 0.4
    r, c = np.nonzero(mask)
    v = rng.uniform(-1, 1, r.shape[0])
    m = CsrMatrix.from_triplets(8, 5, r, c, v)
    # oracle: swap the entry list and reassemble
    want = CsrMatrix.from_triplets(5, 8, c, r, v)
    t = transpose(m)
    assert t.structure_equal(want)
    assert np.array_equal(t.values, want.values)


def test_double_transpose_is_identity():
    rng = np.random.default_rng(3)
    r = rng.integers(0, 10, 30)
    c = rng.integers(0, 6, 30)
    v = rng.uniform(-1, 1, 30)
    m = CsrMatrix.from_triplets(10, 6, r, c, v)
    tt = transpose(transpose(m))
    assert tt.structure_equal(m)
    assert np.array_equal(tt.values, m.values)


def test_symbolic_transpose_stays_symbolic():
    m = CsrMatrix.from_triplets(3, 3, [0, 1], [1, 2], None)
    t = transpose(m)
    assert t.values is None


def test_validation_rejects_bad_offsets():
    with pytest.raises(AssemblyError):
        CsrMatrix(2, 2, [0, 2, 1], [0, 1, 0], [1.0, 1.0, 1.0])
    with pytest.raises(AssemblyError):
        CsrMatrix(2, 2, [0, 1, 2], [0, 2], [1.0, 1.0])
    with pytest.raises(AssemblyError):
        CsrMatrix(1, 3, [0, 2], [1, 1], [1.0, 1.0])  # not strictly increasing


def test_row_set_semantics():
    s = RowSet()
    assert s.insert(3)
    assert s.insert(1)
    assert not s.insert(3)
    assert len(s) == 2
    assert list(s.drain_sorted()) == [1, 3]
    assert 3 in s and 2 not in s


def test_row_accumulator_sums():
    a = RowAccumulator()
    a.add(2, 1.5)
    a.add(2, 2.5)
    cols, vals = a.drain_sorted()
    assert list(cols) == [2]
    assert vals[0] == 4.0


def test_clear_keeps_capacity_and_reuse():
    a = RowAccumulator()
    for j in range(40):
        a.add(j, 1.0)
    cap = a.capacity
    a.clear()
    assert a.capacity == cap and len(a) == 0
    a.add(7, 1.0)
    cols, vals = a.drain_sorted()
    assert list(cols) == [7] and vals[0] == 1.0
    assert a.capacity == cap


def test_drain_order_independent_of_insertion_order():
    rng = np.random.default_rng(11)
    for trial in range(20):
        keys = rng.choice(1000, size=rng.integers(1, 60), replace=False)
        a = RowAccumulator()
        for k in rng.permutation(keys):
            a.add(int(k), float(k))
        cols, vals = a.drain_sorted()
        assert np.array_equal(cols, np.sort(keys))
        assert np.array_equal(vals, np.sort(keys).astype(float))


def test_no_allocation_after_first_peak_via_ledger():
    led = MemoryLedger()
    s = RowSet(capacity=8, ledger=led)
    events = []
    for _ in range(6):
        for j in range(100):
            s.insert(j)
        events.append(led.alloc_events)
        s.clear()
    assert events[0] > 0
    assert all(e == events[0] for e in events[1:])


def test_negative_key_rejected():
    with pytest.raises(ValueError):
        RowSet().insert(-1)
    with pytest.raises(ValueError):
        RowAccumulator().add(-2, 1.0)
