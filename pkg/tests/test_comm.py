import numpy as np
import pytest

from ptap import (
    ContributionBatch,
    DeadlockError,
    OwnershipError,
    StructuralDriftError,
    build_neighbor_list,
    dist_from_global,
    exchange_contributions,
    gather_remote_rows_symbolic,
    make_partition,
    spawn_ranks,
    update_remote_rows_numeric,
)
from ptap.comm import decode_batch, decode_indices, encode_batch, encode_indices
from ptap.partition import NeighborList

SCHEDULERS = ("sequential", "concurrent")


@pytest.mark.parametrize("scheduler", SCHEDULERS)
def test_single_rank_returns_rank(scheduler):
    assert spawn_ranks(1, lambda ctx: ctx.rank, scheduler=scheduler) == [0]


@pytest.mark.parametrize("scheduler", SCHEDULERS)
def test_ring_token(scheduler):
    def ring(ctx):
        ctx.send((ctx.rank + 1) % ctx.nranks, bytes([ctx.rank]))
        return ctx.recv((ctx.rank - 1) % ctx.nranks)[0]

    assert spawn_ranks(3, ring, scheduler=scheduler) == [2, 0, 1]


@pytest.mark.parametrize("scheduler", SCHEDULERS)
def test_receive_first_deadlock_diagnosed(scheduler):
    def stuck(ctx):
        return ctx.recv((ctx.rank + 1) % ctx.nranks)

    with pytest.raises(DeadlockError) as exc:
        spawn_ranks(2, stuck, scheduler=scheduler)
    msg = str(exc.value)
    assert "rank 0" in msg and "rank 1" in msg and "receiving" in msg


def test_pairwise_order_preserved():
    def prog(ctx):
        if ctx.rank == 0:
            for k in range(5):
                ctx.send(1, bytes([k]))
            return None
        return [ctx.recv(0)[0] for _ in range(5)]

    assert spawn_ranks(2, prog)[1] == [0, 1, 2, 3, 4]


def test_rank_exception_propagates():
    def boom(ctx):
        if ctx.rank == 1:
            raise ValueError("boom on rank 1")
        return ctx.recv(1)  # would block forever without the abort

    with pytest.raises(ValueError, match="boom on rank 1"):
        spawn_ranks(2, boom)


def test_encode_decode_round_trips():
    idx = np.array([3, 1 << 40, 7], np.int64)
    assert np.array_equal(decode_indices(encode_indices(idx)), idx)
    rows = np.array([5, 9], np.int64)
    indptr = np.array([0, 2, 5], np.int64)
    cols = np.array([1, 4, 0, 2, 3], np.int64)
    vals = np.array([0.5, -1.25, 3.0, 2**-40, 1e300])
    r, ip, c, v = decode_batch(encode_batch(rows, indptr, cols, vals), with_values=True)
    assert np.array_equal(r, rows) and np.array_equal(ip, indptr)
    assert np.array_equal(c, cols) and np.array_equal(v, vals)
    r, ip, c, v = decode_batch(encode_batch(rows, indptr, cols), with_values=False)
    assert v is None and np.array_equal(c, cols)


def _toy_dist(toy_a, toy_p, rank):
    rp = make_partition(6, 3)
    cp = make_partition(4, 3)
    return (
        dist_from_global(toy_a, rp, rp, rank),
        dist_from_global(toy_p, rp, cp, rank),
    )


def test_gather_toy_rank0(toy_a, toy_p):
    def prog(ctx):
        a, p = _toy_dist(toy_a, toy_p, ctx.rank)
        nl = build_neighbor_list(a.local, p.row_part)
        rr = gather_remote_rows_symbolic(ctx, nl, p)
        return list(rr.source_cols), [list(rr.rows.row_cols(i)) for i in range(rr.rows.nrows)]

    src, rows = spawn_ranks(3, prog)[0]
    assert src == [2, 4]
    assert rows == [[2, 3], [1, 3]]


def test_gather_empty_neighbors_sends_nothing(toy_p):
    from ptap import csr_from_triplets

    diag = csr_from_triplets(6, 6, [(i, i, 1.0) for i in range(6)])
    trace = []

    def prog(ctx):
        a, p = _toy_dist(diag, toy_p, ctx.rank)
        nl = build_neighbor_list(a.local, p.row_part)
        rr = gather_remote_rows_symbolic(ctx, nl, p)
        return rr.rows.nrows

    assert spawn_ranks(3, prog, trace=trace) == [0, 0, 0]
    assert trace == []


def test_gather_matches_sequential_p():
    rng = np.random.default_rng(8)
    from ptap import CsrMatrix

    a = CsrMatrix.from_triplets(
        16, 16, rng.integers(0, 16, 100), rng.integers(0, 16, 100), rng.uniform(-1, 1, 100)
    )
    p = CsrMatrix.from_triplets(
        16, 10, rng.integers(0, 16, 60), rng.integers(0, 10, 60), rng.uniform(-1, 1, 60)
    )
    rp = make_partition(16, 4)
    cp = make_partition(10, 4)

    def prog(ctx):
        ad = dist_from_global(a, rp, rp, ctx.rank)
        pd = dist_from_global(p, rp, cp, ctx.rank)
        nl = build_neighbor_list(ad.local, rp)
        rr = gather_remote_rows_symbolic(ctx, nl, pd)
        out = []
        for k, g in enumerate(rr.source_cols):
            out.append((int(g), list(rr.rows.row_cols(k)), list(rr.rows.row_values(k))))
        return out

    for rank_rows in spawn_ranks(4, prog):
        for g, cols, vals in rank_rows:
            assert cols == list(p.row_cols(g))
            assert vals == list(p.row_values(g))


def test_update_scales_and_is_bitwise_stable(toy_a, toy_p):
    def prog(ctx):
        a, p = _toy_dist(toy_a, toy_p, ctx.rank)
        nl = build_neighbor_list(a.local, p.row_part)
        rr = gather_remote_rows_symbolic(ctx, nl, p)
        before = rr.rows.values.copy()
        struct_before = rr.rows.col_indices.copy()
        update_remote_rows_numeric(ctx, rr, p)  # unchanged P -> bitwise same
        unchanged = np.array_equal(rr.rows.values, before)
        p.local.diag.values *= 2.0
        p.local.offdiag.values *= 2.0
        update_remote_rows_numeric(ctx, rr, p)
        scaled = np.array_equal(rr.rows.values, 2.0 * before)
        struct_same = np.array_equal(rr.rows.col_indices, struct_before)
        return unchanged, scaled, struct_same

    assert all(all(flags) for flags in spawn_ranks(3, prog))


def test_update_equals_fresh_gather():
    rng = np.random.default_rng(21)
    from ptap import CsrMatrix

    a = CsrMatrix.from_triplets(
        12, 12, rng.integers(0, 12, 70), rng.integers(0, 12, 70), rng.uniform(-1, 1, 70)
    )
    p_rows = rng.integers(0, 12, 40)
    p_cols = rng.integers(0, 8, 40)
    p1 = CsrMatrix.from_triplets(12, 8, p_rows, p_cols, rng.uniform(-1, 1, 40))
    new_vals = rng.uniform(-1, 1, p1.nnz)
    rp = make_partition(12, 3)
    cp = make_partition(8, 3)

    def prog(ctx):
        ad = dist_from_global(a, rp, rp, ctx.rank)
        pd = dist_from_global(p1, rp, cp, ctx.rank)
        nl = build_neighbor_list(ad.local, rp)
        rr = gather_remote_rows_symbolic(ctx, nl, pd)
        # refresh values in place, then push
        lo, hi = rp.owned_range(ctx.rank)
        p2 = CsrMatrix(12, 8, p1.row_offsets, p1.col_indices, new_vals)
        pd2 = dist_from_global(p2, rp, cp, ctx.rank)
        pd.local.diag.values[:] = pd2.local.diag.values
        pd.local.offdiag.values[:] = pd2.local.offdiag.values
        update_remote_rows_numeric(ctx, rr, pd)
        rr2 = gather_remote_rows_symbolic(ctx, nl, pd)
        return np.array_equal(rr.rows.values, rr2.rows.values)

    assert all(spawn_ranks(3, prog))


def test_update_detects_structural_drift(toy_a, toy_p):
    from ptap import csr_from_triplets
    from tests.conftest import P_ENTRIES

    p_extra = csr_from_triplets(6, 4, P_ENTRIES + [(1, 3, 5.0)])

    def prog(ctx):
        a, p = _toy_dist(toy_a, toy_p, ctx.rank)
        nl = build_neighbor_list(a.local, p.row_part)
        rr = gather_remote_rows_symbolic(ctx, nl, p)
        rp = make_partition(6, 3)
        cp = make_partition(4, 3)
        p_new = dist_from_global(p_extra, rp, cp, ctx.rank)
        update_remote_rows_numeric(ctx, rr, p_new)

    with pytest.raises(StructuralDriftError):
        spawn_ranks(3, prog)


def test_exchange_basic_and_empty():
    part = make_partition(8, 2)

    def prog(ctx):
        out = []
        if ctx.rank == 0:
            out = [
                ContributionBatch(
                    1,
                    np.array([5], np.int64),
                    np.array([0, 2], np.int64),
                    np.array([1, 3], np.int64),
                    np.array([0.5, 2.5]),
                )
            ]
        got = exchange_contributions(ctx, out, part, with_values=True)
        return [(b.source, list(b.rows), list(b.cols), list(b.vals)) for b in got]

    res = spawn_ranks(2, prog)
    assert res[0] == []
    assert res[1] == [(0, [5], [1, 3], [0.5, 2.5])]

    def silent(ctx):
        return exchange_contributions(ctx, [], part, with_values=False)

    assert spawn_ranks(2, silent) == [[], []]


def test_exchange_rejects_unowned_row():
    part = make_partition(8, 2)

    def prog(ctx):
        if ctx.rank == 0:
            bad = ContributionBatch(
                1,
                np.array([0], np.int64),  # rank 1 owns [4, 8)
                np.array([0, 1], np.int64),
                np.array([0], np.int64),
                np.array([1.0]),
            )
            exchange_contributions(ctx, [bad], part, with_values=True)
        else:
            exchange_contributions(ctx, [], part, with_values=True)

    with pytest.raises(OwnershipError, match="row 0"):
        spawn_ranks(2, prog)


@pytest.mark.parametrize("scheduler", SCHEDULERS)
def test_exchange_multiset_conservation(scheduler):
    part = make_partition(25, 5)

    def prog(ctx):
        g = np.random.default_rng(100 + ctx.rank)
        out = []
        sent = []
        for dest in range(ctx.nranks):
            if dest == ctx.rank or g.random() < 0.3:
                continue
            lo, hi = part.owned_range(dest)
            nrows = int(g.integers(1, 4))
            rows = np.sort(g.choice(np.arange(lo, hi), nrows, replace=False)).astype(np.int64)
            counts = g.integers(1, 5, nrows)
            ip = np.zeros(nrows + 1, np.int64)
            np.cumsum(counts, out=ip[1:])
            cols = g.integers(0, 30, ip[-1]).astype(np.int64)
            vals = g.random(ip[-1])
            b = ContributionBatch(dest, rows, ip, cols, vals)
            out.append(b)
            sent.extend((dest, *e) for e in b.iter_entries())
        got = exchange_contributions(ctx, out, part, with_values=True)
        assert [b.source for b in got] == sorted(b.source for b in got)
        received = [(ctx.rank, *e) for b in got for e in b.iter_entries()]
        return sent, received

    res = spawn_ranks(5, prog, scheduler=scheduler)
    sent = sorted(sum((s for s, _ in res), []))
    received = sorted(sum((r for _, r in res), []))
    assert sent == received


def test_fixed_seed_trace_deterministic(toy_a, toy_p):
    def prog(ctx):
        a, p = _toy_dist(toy_a, toy_p, ctx.rank)
        nl = build_neighbor_list(a.local, p.row_part)
        rr = gather_remote_rows_symbolic(ctx, nl, p)
        update_remote_rows_numeric(ctx, rr, p)
        return None

    t1, t2 = [], []
    spawn_ranks(3, prog, trace=t1)
    spawn_ranks(3, prog, trace=t2)
    assert t1 == t2
    assert len(t1) > 0


def test_overlap_contract_messages_flow_at_begin():
    """exchange_begin must deliver payloads before completion is requested."""
    part = make_partition(4, 2)
    trace = []

    def prog(ctx):
        from ptap.comm import exchange_contributions_begin, exchange_contributions_complete

        out = []
        if ctx.rank == 0:
            out = [
                ContributionBatch(
                    1,
                    np.array([3], np.int64),
                    np.array([0, 1], np.int64),
                    np.array([0], np.int64),
                    np.array([1.0]),
                )
            ]
        handle = exchange_contributions_begin(ctx, out, part)
        traced_after_begin = len(trace)
        got = exchange_contributions_complete(ctx, handle, with_values=True)
        return traced_after_begin, len(got)

    res = spawn_ranks(2, prog, trace=trace)
    assert res[0][0] >= 1  # rank 0's payload was traced before it completed
    assert res[1][1] == 1


def test_gather_rejects_out_of_range_request(toy_p):
    def prog(ctx):
        cp = make_partition(4, 3)
        rp = make_partition(6, 3)
        p = dist_from_global(toy_p, rp, cp, ctx.rank)
        nl = NeighborList(ranks=[(ctx.rank + 1) % 3], rows_by_rank={(ctx.rank + 1) % 3: np.array([99], np.int64)})
        gather_remote_rows_symbolic(ctx, nl, p)

    with pytest.raises(OwnershipError):
        spawn_ranks(3, prog)


@pytest.mark.parametrize("scheduler", SCHEDULERS)
def test_message_count_is_neighbor_pairwise(toy_a, toy_p, scheduler):
    trace = []

    def prog(ctx):
        a, p = _toy_dist(toy_a, toy_p, ctx.rank)
        nl = build_neighbor_list(a.local, p.row_part)
        return gather_remote_rows_symbolic(ctx, nl, p).rows.nrows

    spawn_ranks(3, prog, trace=trace, scheduler=scheduler)
    requests = [(t.sender, t.receiver) for t in trace if t.kind == "request"]
    replies = [(t.sender, t.receiver) for t in trace if t.kind == "reply"]
    # every rank of the toy problem needs rows from both other ranks
    assert sorted(requests) == sorted((i, j) for i in range(3) for j in range(3) if i != j)
    assert sorted(replies) == sorted((j, i) for i, j in requests)
    assert len(trace) == len(requests) + len(replies)
