"""Multi-rank execution harness and the communication patterns.

Ranks run as threads inside one process.  Two schedulers are available:

* ``sequential`` — a baton passes between ranks; exactly one rank runs at a
  time and the next runnable rank is always chosen round-robin, so message
  traces and results are bit-for-bit reproducible.
* ``concurrent`` — all rank threads run freely.  Results still match the
  sequential scheduler bitwise because every reduction in the package
  merges received data in ascending sender order, never arrival order.

Messages between a fixed (sender, receiver) pair are delivered in send
order; there is no global ordering.  Collectives (the sparse exchanges) are
matched by call order per rank: the k-th collective call on every rank
belongs to the same round.  If every live rank ends up blocked with no
deliverable message, the harness raises ``DeadlockError`` naming each
blocked rank and what it was waiting for.
"""

from __future__ import annotations

import json
import threading
import zlib
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import DeadlockError, OwnershipError, StructuralDriftError
from .ledger import MemoryLedger, PhaseTimer
from .partition import DistMatrix, NeighborList, RowPartition
from .sparse import CsrMatrix

KIND_REQUEST = "request"
KIND_REPLY = "reply"
KIND_CONTRIBUTION = "contribution"


class MessageRecord(NamedTuple):
    step: int
    sender: int
    receiver: int
    nbytes: int
    kind: str


def dump_trace(records: list[MessageRecord], path) -> None:
    """One JSON object per line: step, sender, receiver, nbytes, kind."""
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r._asdict()) + "\n")


class _Aborted(BaseException):
    """Internal: unwinds rank threads when the harness aborts."""


class RankContext:
    """One rank's handle on the harness: messaging plus per-rank services."""

    def __init__(self, harness: "_Harness", rank: int):
        self._h = harness
        self.rank = rank
        self.nranks = harness.nranks
        self.ledger = MemoryLedger()
        self.timer = PhaseTimer()

    # -- point-to-point ----------------------------------------------------

    def send(self, dest: int, payload: bytes, kind: str = "message") -> None:
        self._h.send(self.rank, dest, payload, kind)

    def recv(self, source: int) -> bytes:
        return self._h.recv(self.rank, source)

    # -- sparse collective exchange -----------------------------------------

    def exchange_begin(self, outgoing: dict[int, bytes], kind: str) -> int:
        """Initiate a collective sparse exchange; never blocks.

        Payloads are delivered (and traced) immediately, so callers can
        overlap local computation between initiation and completion.
        """
        return self._h.exchange_begin(self.rank, outgoing, kind)

    def exchange_complete(self, handle: int) -> dict[int, bytes]:
        """Block until every rank has initiated this round; returns
        received payloads keyed by source rank."""
        return self._h.exchange_complete(self.rank, handle)

    def exchange(self, outgoing: dict[int, bytes], kind: str) -> dict[int, bytes]:
        return self.exchange_complete(self.exchange_begin(outgoing, kind))


class _Harness:
    def __init__(self, nranks: int, scheduler: str, trace: list | None):
        if nranks < 1:
            raise ValueError("need at least one rank")
        if scheduler not in ("sequential", "concurrent"):
            raise ValueError(f"unknown scheduler {scheduler!r}")
        self.nranks = nranks
        self.sequential = scheduler == "sequential"
        self.cv = threading.Condition()
        self.queues = {(s, d): deque() for s in range(nranks) for d in range(nranks)}
        self.status = ["ready"] * nranks
        self.wait_info = [None] * nranks
        self.results = [None] * nranks
        self.failure: tuple[int, BaseException] | None = None
        self.abort = False
        self.deadlock: DeadlockError | None = None
        self.current: int | None = None
        self.trace = trace
        self.step = 0
        self.rank_epoch = [0] * nranks
        self.coll_entered: dict[int, set] = {}
        self.coll_inbox: dict[int, dict[int, dict[int, bytes]]] = {}

    # -- bookkeeping (call with cv held) -------------------------------------

    def _record(self, sender, receiver, nbytes, kind):
        if self.trace is not None:
            self.trace.append(MessageRecord(self.step, sender, receiver, nbytes, kind))
        self.step += 1

    def _recv_ready(self, rank) -> bool:
        return bool(self.queues[(self.wait_info[rank], rank)])

    def _coll_ready(self, rank) -> bool:
        epoch = self.wait_info[rank]
        return len(self.coll_entered.get(epoch, ())) == self.nranks

    def _is_runnable(self, rank) -> bool:
        st = self.status[rank]
        if st == "ready":
            return True
        if st == "blocked_recv":
            return self._recv_ready(rank)
        if st == "blocked_coll":
            return self._coll_ready(rank)
        return False

    def _unfinished(self):
        return [r for r in range(self.nranks) if self.status[r] not in ("finished", "failed")]

    def _deadlock_diag(self) -> str:
        lines = []
        for r in range(self.nranks):
            st = self.status[r]
            if st == "blocked_recv":
                lines.append(f"rank {r} blocked receiving from rank {self.wait_info[r]}")
            elif st == "blocked_coll":
                epoch = self.wait_info[r]
                entered = sorted(self.coll_entered.get(epoch, ()))
                missing = [x for x in range(self.nranks) if x not in entered]
                lines.append(
                    f"rank {r} blocked in collective round {epoch} "
                    f"(entered {entered}, missing {missing})"
                )
            elif st == "finished":
                lines.append(f"rank {r} already finished")
        return "deadlock: " + "; ".join(lines)

    def _check_deadlock_concurrent(self):
        # Called with cv held whenever a rank blocks or finishes.
        live = self._unfinished()
        if not live:
            return
        for r in live:
            if self.status[r] in ("ready", "running") or self._is_runnable(r):
                return
        self.deadlock = DeadlockError(self._deadlock_diag())
        self.abort = True
        self.cv.notify_all()

    def _yield_baton(self):
        if self.sequential:
            self.current = None
            self.cv.notify_all()

    def _wait_until_scheduled(self, rank):
        # With cv held: block until this rank may proceed.
        while True:
            if self.abort:
                raise _Aborted()
            if self.sequential:
                if self.current == rank and self._is_runnable(rank):
                    return
            else:
                if self._is_runnable(rank):
                    return
            self.cv.wait()

    # -- messaging ------------------------------------------------------------

    def _check_rank(self, r):
        if not (0 <= r < self.nranks):
            raise ValueError(f"rank {r} outside 0..{self.nranks - 1}")

    def send(self, rank, dest, payload, kind):
        self._check_rank(dest)
        with self.cv:
            if self.abort:
                raise _Aborted()
            self.queues[(rank, dest)].append(bytes(payload))
            self._record(rank, dest, len(payload), kind)
            if not self.sequential:
                self.cv.notify_all()

    def recv(self, rank, source):
        self._check_rank(source)
        with self.cv:
            q = self.queues[(source, rank)]
            if not q:
                self.status[rank] = "blocked_recv"
                self.wait_info[rank] = source
                self._yield_baton()
                if not self.sequential:
                    self._check_deadlock_concurrent()
                self._wait_until_scheduled(rank)
                self.status[rank] = "running"
                self.wait_info[rank] = None
            return q.popleft()

    def exchange_begin(self, rank, outgoing, kind):
        with self.cv:
            if self.abort:
                raise _Aborted()
            epoch = self.rank_epoch[rank]
            self.rank_epoch[rank] += 1
            entered = self.coll_entered.setdefault(epoch, set())
            inbox = self.coll_inbox.setdefault(epoch, {})
            for dest in sorted(outgoing):
                self._check_rank(dest)
                payload = bytes(outgoing[dest])
                inbox.setdefault(dest, {})[rank] = payload
                self._record(rank, dest, len(payload), kind)
            entered.add(rank)
            if not self.sequential:
                self.cv.notify_all()
            return epoch

    def exchange_complete(self, rank, epoch):
        with self.cv:
            if len(self.coll_entered.get(epoch, ())) != self.nranks:
                self.status[rank] = "blocked_coll"
                self.wait_info[rank] = epoch
                self._yield_baton()
                if not self.sequential:
                    self._check_deadlock_concurrent()
                self._wait_until_scheduled(rank)
                self.status[rank] = "running"
                self.wait_info[rank] = None
            mine = self.coll_inbox.get(epoch, {}).pop(rank, {})
            return dict(sorted(mine.items()))

    # -- lifecycle --------------------------------------------------------------

    def _thread_body(self, rank, program, ctx):
        try:
            with self.cv:
                self._wait_until_scheduled(rank)
                self.status[rank] = "running"
            result = program(ctx)
            with self.cv:
                self.results[rank] = result
                self.status[rank] = "finished"
                if not self.sequential:
                    self._check_deadlock_concurrent()
                self._yield_baton()
                self.cv.notify_all()
        except _Aborted:
            with self.cv:
                self.status[rank] = "failed"
                self._yield_baton()
        except BaseException as exc:
            with self.cv:
                if self.failure is None:
                    self.failure = (rank, exc)
                self.status[rank] = "failed"
                self.abort = True
                self._yield_baton()
                self.cv.notify_all()

    def run(self, program):
        ctxs = [RankContext(self, r) for r in range(self.nranks)]
        threads = [
            threading.Thread(target=self._thread_body, args=(r, program, ctxs[r]), daemon=True)
            for r in range(self.nranks)
        ]
        for t in threads:
            t.start()
        if self.sequential:
            self._schedule()
        for t in threads:
            t.join()
        if self.failure is not None:
            raise self.failure[1]
        if self.deadlock is not None:
            raise self.deadlock
        return self.results, ctxs

    def _schedule(self):
        rr = 0
        with self.cv:
            while True:
                live = self._unfinished()
                if not live or self.abort:
                    return
                runnable = [r for r in live if self._is_runnable(r)]
                if not runnable:
                    self.deadlock = DeadlockError(self._deadlock_diag())
                    self.abort = True
                    self.cv.notify_all()
                    return
                pick = next((r for r in runnable if r >= rr), runnable[0])
                rr = pick + 1
                self.current = pick
                self.cv.notify_all()
                while self.current is not None and not self.abort:
                    self.cv.wait()


def spawn_ranks(
    nranks: int,
    program: Callable[[RankContext], object],
    *,
    scheduler: str = "sequential",
    trace: list | None = None,
    return_contexts: bool = False,
):
    """Run ``program`` on ``nranks`` rank contexts to completion.

    Returns the per-rank results (plus the contexts, carrying each rank's
    ledger and timer, when ``return_contexts`` is set).  A deadlock raises
    ``DeadlockError``; an exception on any rank aborts the others and is
    re-raised here.
    """
    h = _Harness(nranks, scheduler, trace)
    results, ctxs = h.run(program)
    if return_contexts:
        return results, ctxs
    return results


# ---------------------------------------------------------------------------
# Wire encoding.
#
# Batch framing: row count, then per row: global row, entry count, the
# column array, and (numeric batches only) the value array.  All integers
# are little-endian int64, values are float64.
# ---------------------------------------------------------------------------


def encode_indices(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype=np.int64)
    return np.int64(arr.shape[0]).tobytes() + arr.tobytes()


def decode_indices(buf: bytes) -> np.ndarray:
    n = int(np.frombuffer(buf, np.int64, 1)[0])
    return np.frombuffer(buf, np.int64, n, 8).copy()


def encode_values(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    return np.int64(arr.shape[0]).tobytes() + arr.tobytes()


def decode_values(buf: bytes) -> np.ndarray:
    n = int(np.frombuffer(buf, np.int64, 1)[0])
    return np.frombuffer(buf, np.float64, n, 8).copy()


def encode_batch(rows: np.ndarray, indptr: np.ndarray, cols: np.ndarray, vals=None) -> bytes:
    parts = [np.int64(rows.shape[0]).tobytes()]
    for b in range(rows.shape[0]):
        lo, hi = int(indptr[b]), int(indptr[b + 1])
        parts.append(np.int64(rows[b]).tobytes())
        parts.append(np.int64(hi - lo).tobytes())
        parts.append(np.ascontiguousarray(cols[lo:hi], np.int64).tobytes())
        if vals is not None:
            parts.append(np.ascontiguousarray(vals[lo:hi], np.float64).tobytes())
    return b"".join(parts)


def decode_batch(buf: bytes, with_values: bool):
    """Returns (rows, indptr, cols, vals-or-None)."""
    nrows = int(np.frombuffer(buf, np.int64, 1)[0])
    off = 8
    rows = np.empty(nrows, np.int64)
    counts = np.empty(nrows, np.int64)
    col_chunks = []
    val_chunks = []
    for b in range(nrows):
        head = np.frombuffer(buf, np.int64, 2, off)
        off += 16
        rows[b] = head[0]
        cnt = int(head[1])
        counts[b] = cnt
        col_chunks.append(np.frombuffer(buf, np.int64, cnt, off))
        off += 8 * cnt
        if with_values:
            val_chunks.append(np.frombuffer(buf, np.float64, cnt, off))
            off += 8 * cnt
    indptr = np.zeros(nrows + 1, np.int64)
    np.cumsum(counts, out=indptr[1:])
    cols = np.concatenate(col_chunks) if col_chunks else np.zeros(0, np.int64)
    vals = None
    if with_values:
        vals = np.concatenate(val_chunks) if val_chunks else np.zeros(0)
    return rows, indptr, cols.copy(), None if vals is None else vals.copy()


@dataclass
class ContributionBatch:
    """Rows of the output owned by ``destination``, produced elsewhere.

    ``source`` is filled in on the receiving side.  Symbolic batches carry
    no values.
    """

    destination: int
    rows: np.ndarray
    indptr: np.ndarray
    cols: np.ndarray
    vals: np.ndarray | None = None
    source: int | None = None

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    def iter_entries(self):
        for b in range(self.rows.shape[0]):
            lo, hi = int(self.indptr[b]), int(self.indptr[b + 1])
            for t in range(lo, hi):
                yield int(self.rows[b]), int(self.cols[t]), (
                    None if self.vals is None else float(self.vals[t])
                )

    def encode(self) -> bytes:
        return encode_batch(self.rows, self.indptr, self.cols, self.vals)

    @classmethod
    def decode(cls, destination: int, source: int, buf: bytes, with_values: bool):
        rows, indptr, cols, vals = decode_batch(buf, with_values)
        return cls(destination, rows, indptr, cols, vals, source=source)


def exchange_contributions(
    ctx: RankContext,
    outgoing: list[ContributionBatch],
    row_part: RowPartition,
    with_values: bool,
) -> list[ContributionBatch]:
    """Ship each batch to its destination; returns received batches in
    ascending source-rank order."""
    h = exchange_contributions_begin(ctx, outgoing, row_part)
    return exchange_contributions_complete(ctx, h, with_values)


def exchange_contributions_begin(ctx, outgoing, row_part) -> int:
    payloads = {}
    for batch in outgoing:
        lo, hi = row_part.owned_range(batch.destination)
        if batch.rows.size and (batch.rows.min() < lo or batch.rows.max() >= hi):
            bad = batch.rows[(batch.rows < lo) | (batch.rows >= hi)][0]
            raise OwnershipError(
                f"row {bad} in a batch for rank {batch.destination}, which owns [{lo}, {hi})"
            )
        if batch.destination in payloads:
            raise ValueError(f"two batches for destination {batch.destination}")
        payloads[batch.destination] = batch.encode()
    with ctx.timer.phase("exchange"):
        return ctx.exchange_begin(payloads, KIND_CONTRIBUTION)


def exchange_contributions_complete(ctx, handle, with_values) -> list[ContributionBatch]:
    with ctx.timer.phase("exchange"):
        incoming = ctx.exchange_complete(handle)
    return [
        ContributionBatch.decode(ctx.rank, src, buf, with_values)
        for src, buf in incoming.items()
    ]


# ---------------------------------------------------------------------------
# Remote-row gather for P.
# ---------------------------------------------------------------------------


@dataclass
class RemoteRows:
    """Rows of P owned elsewhere but needed locally (the gathered matrix).

    ``rows`` has one row per requested global row, columns global, values as
    of the gather.  The owner-side serve patterns are kept so the numeric
    refresh can push values without re-negotiating structure.
    """

    source_cols: np.ndarray
    rows: CsrMatrix
    neighbor_slices: list[tuple[int, int, int]]
    serve_patterns: dict[int, dict] = field(default_factory=dict)
    structure_token: tuple = ()

    @property
    def nbytes(self) -> int:
        n = self.source_cols.nbytes + self.rows.nbytes
        for pat in self.serve_patterns.values():
            n += pat["rows"].nbytes + pat["gather_idx"].nbytes + pat["widths"].nbytes
        return n


def _p_structure_token(p: DistMatrix) -> tuple:
    lm = p.local
    digest = zlib.crc32(lm.diag.row_offsets.tobytes())
    digest = zlib.crc32(lm.diag.col_indices.tobytes(), digest)
    digest = zlib.crc32(lm.offdiag.row_offsets.tobytes(), digest)
    digest = zlib.crc32(lm.offdiag.col_indices.tobytes(), digest)
    digest = zlib.crc32(lm.col_map.tobytes(), digest)
    return (lm.nrows, lm.diag.nnz, lm.offdiag.nnz, digest)


def _serve_rows(p: DistMatrix, wanted: np.ndarray):
    """Build (indptr, global cols, gather_idx) for the owner's wanted rows."""
    lm = p.local
    widths = np.empty(wanted.shape[0], np.int64)
    col_chunks = []
    idx_chunks = []
    dnnz = lm.diag.nnz
    for b, g in enumerate(wanted):
        i = int(g) - lm.row_lo
        gd = lm.diag.row_cols(i) + lm.col_lo
        go = lm.col_map[lm.offdiag.row_cols(i)]
        merged = np.concatenate((gd, go))
        src = np.concatenate(
            (
                np.arange(lm.diag.row_offsets[i], lm.diag.row_offsets[i + 1], dtype=np.int64),
                dnnz
                + np.arange(lm.offdiag.row_offsets[i], lm.offdiag.row_offsets[i + 1], dtype=np.int64),
            )
        )
        order = np.argsort(merged)
        col_chunks.append(merged[order])
        idx_chunks.append(src[order])
        widths[b] = merged.shape[0]
    indptr = np.zeros(wanted.shape[0] + 1, np.int64)
    np.cumsum(widths, out=indptr[1:])
    cols = np.concatenate(col_chunks) if col_chunks else np.zeros(0, np.int64)
    gather_idx = np.concatenate(idx_chunks) if idx_chunks else np.zeros(0, np.int64)
    return indptr, cols, gather_idx, widths


def _p_values_concat(p: DistMatrix) -> np.ndarray:
    return np.concatenate((p.local.diag.values, p.local.offdiag.values))


def gather_remote_rows_symbolic(
    ctx: RankContext, neighbors: NeighborList, p: DistMatrix
) -> RemoteRows:
    """Collective: fetch structure and current values of the needed remote
    rows of P using one request and one reply per neighbor pair."""
    for r in neighbors.ranks:
        rows = neighbors.rows_by_rank[r]
        if rows.size and (rows.min() < 0 or rows.max() >= p.row_part.nglobal):
            raise OwnershipError(
                f"requested P row outside the global range [0, {p.row_part.nglobal})"
            )
    with ctx.timer.phase("gather"):
        requests = {r: encode_indices(neighbors.rows_by_rank[r]) for r in neighbors.ranks}
        incoming = ctx.exchange(requests, KIND_REQUEST)

        replies = {}
        serve_patterns = {}
        vcat = None
        for src, buf in incoming.items():
            wanted = decode_indices(buf)
            lo, hi = p.row_part.owned_range(ctx.rank)
            if wanted.size and (wanted.min() < lo or wanted.max() >= hi):
                raise OwnershipError(
                    f"rank {src} requested P rows outside rank {ctx.rank}'s range [{lo}, {hi})"
                )
            indptr, cols, gather_idx, widths = _serve_rows(p, wanted)
            if vcat is None:
                vcat = _p_values_concat(p)
            replies[src] = encode_batch(wanted, indptr, cols, vcat[gather_idx])
            serve_patterns[src] = {
                "rows": wanted,
                "gather_idx": gather_idx,
                "widths": widths,
            }
        reply_in = ctx.exchange(replies, KIND_REPLY)

    chunks_rows = []
    chunks_ip = []
    chunks_cols = []
    chunks_vals = []
    slices = []
    pos = 0
    for r in neighbors.ranks:
        if r not in reply_in:
            raise StructuralDriftError(f"no reply from neighbor rank {r}")
        rows, indptr, cols, vals = decode_batch(reply_in[r], with_values=True)
        if not np.array_equal(rows, neighbors.rows_by_rank[r]):
            raise StructuralDriftError(f"reply from rank {r} does not match the request")
        chunks_rows.append(rows)
        chunks_ip.append(np.diff(indptr))
        chunks_cols.append(cols)
        chunks_vals.append(vals)
        slices.append((r, pos, pos + rows.shape[0]))
        pos += rows.shape[0]
    source_cols = np.concatenate(chunks_rows) if chunks_rows else np.zeros(0, np.int64)
    widths = np.concatenate(chunks_ip) if chunks_ip else np.zeros(0, np.int64)
    indptr = np.zeros(source_cols.shape[0] + 1, np.int64)
    np.cumsum(widths, out=indptr[1:])
    cols = np.concatenate(chunks_cols) if chunks_cols else np.zeros(0, np.int64)
    vals = np.concatenate(chunks_vals) if chunks_vals else np.zeros(0)
    rows_csr = CsrMatrix(source_cols.shape[0], p.col_part.nglobal, indptr, cols, vals, check=False)
    return RemoteRows(source_cols, rows_csr, slices, serve_patterns, _p_structure_token(p))


def update_remote_rows_numeric(ctx: RankContext, rr: RemoteRows, p: DistMatrix) -> RemoteRows:
    """Collective: refresh the gathered values only; structure untouched."""
    if rr.structure_token != _p_structure_token(p):
        raise StructuralDriftError("P changed structure since the symbolic gather")
    with ctx.timer.phase("gather"):
        outgoing = {}
        vcat = None
        for dest, pat in rr.serve_patterns.items():
            if vcat is None:
                vcat = _p_values_concat(p)
            if pat["gather_idx"].size and pat["gather_idx"].max() >= vcat.shape[0]:
                raise StructuralDriftError("P changed structure since the symbolic gather")
            outgoing[dest] = encode_values(vcat[pat["gather_idx"]])
        incoming = ctx.exchange(outgoing, KIND_REPLY)
    for r, lo, hi in rr.neighbor_slices:
        if r not in incoming:
            raise StructuralDriftError(f"no value update from neighbor rank {r}")
        vals = decode_values(incoming[r])
        a, b = int(rr.rows.row_offsets[lo]), int(rr.rows.row_offsets[hi])
        if vals.shape[0] != b - a:
            raise StructuralDriftError(
                f"value update from rank {r} has {vals.shape[0]} entries, expected {b - a}"
            )
        rr.rows.values[a:b] = vals
    return rr
