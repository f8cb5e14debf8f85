"""JIT-compiled kernels: open-addressing hash tables and the per-row product loops.

Every hash table here is a flat ``int64`` key array (value tables carry a
parallel ``float64`` array) with power-of-two capacity, linear probing, and
geometric growth at 75% load.  Empty slots hold -1; keys are column indices
(or row-major combined row/column keys) and are always non-negative.

All kernels operate on the raw CSR arrays of the diagonal/off-diagonal blocks
so the Python layer above stays allocation-free during numeric passes.
"""

import numpy as np
from numba import njit

# Fibonacci multiplier (0x9E3779B97F4A7C15 as a signed 64-bit value).
_MIX = np.int64(-7046029254386353131)

_EMPTY = np.int64(-1)

__all__ = [
    "hs_new",
    "hs_insert",
    "hs_contains",
    "hs_drain",
    "hm_new_vals",
    "hm_add",
    "hm_get",
    "row_ap_symbolic",
    "row_ap_numeric",
    "ap_symbolic_driver",
    "ap_numeric_driver",
    "outer_symbolic_driver",
    "outer_numeric_driver",
    "arena_insert_pairs",
    "scatter_add_rows",
    "local_spgemm_symbolic_arena",
    "local_spgemm_numeric_staging",
    "local_spgemm_numeric_into_c",
]


@njit(cache=True)
def hs_new(capacity):
    keys = np.empty(capacity, np.int64)
    keys[:] = _EMPTY
    return keys


@njit(cache=True)
def _hs_put_raw(keys, j):
    # Insert into a table known to have a free slot and known to lack j.
    mask = keys.shape[0] - 1
    h = (j * _MIX) & mask
    while keys[h] >= 0:
        h = (h + 1) & mask
    keys[h] = j


@njit(cache=True)
def hs_insert(keys, size, j):
    """Insert j; returns (keys, size, inserted). Grows at 75% load."""
    cap = keys.shape[0]
    if (size + 1) * 4 > 3 * cap:
        grown = np.empty(cap * 2, np.int64)
        grown[:] = _EMPTY
        for slot in range(cap):
            k = keys[slot]
            if k >= 0:
                _hs_put_raw(grown, k)
        keys = grown
        cap = keys.shape[0]
    mask = cap - 1
    h = (j * _MIX) & mask
    while True:
        k = keys[h]
        if k == j:
            return keys, size, False
        if k == _EMPTY:
            keys[h] = j
            return keys, size + 1, True
        h = (h + 1) & mask


@njit(cache=True)
def hs_contains(keys, j):
    mask = keys.shape[0] - 1
    h = (j * _MIX) & mask
    while True:
        k = keys[h]
        if k == j:
            return True
        if k == _EMPTY:
            return False
        h = (h + 1) & mask


@njit(cache=True)
def hs_drain(keys, size):
    """Occupied keys in ascending order."""
    out = np.empty(size, np.int64)
    n = 0
    for slot in range(keys.shape[0]):
        k = keys[slot]
        if k >= 0:
            out[n] = k
            n += 1
    out.sort()
    return out


@njit(cache=True)
def hm_new_vals(capacity):
    return np.zeros(capacity, np.float64)


@njit(cache=True)
def hm_add(keys, vals, size, j, v):
    """Accumulate v into key j (+= semantics); returns (keys, vals, size)."""
    cap = keys.shape[0]
    if (size + 1) * 4 > 3 * cap:
        gk = np.empty(cap * 2, np.int64)
        gk[:] = _EMPTY
        gv = np.zeros(cap * 2, np.float64)
        nmask = gk.shape[0] - 1
        for slot in range(cap):
            k = keys[slot]
            if k >= 0:
                h = (k * _MIX) & nmask
                while gk[h] >= 0:
                    h = (h + 1) & nmask
                gk[h] = k
                gv[h] = vals[slot]
        keys = gk
        vals = gv
        cap = keys.shape[0]
    mask = cap - 1
    h = (j * _MIX) & mask
    while True:
        k = keys[h]
        if k == j:
            vals[h] += v
            return keys, vals, size
        if k == _EMPTY:
            keys[h] = j
            vals[h] = v
            return keys, vals, size + 1
        h = (h + 1) & mask


@njit(cache=True)
def hm_get(keys, vals, j):
    mask = keys.shape[0] - 1
    h = (j * _MIX) & mask
    while True:
        k = keys[h]
        if k == j:
            return True, vals[h]
        if k == _EMPTY:
            return False, 0.0
        h = (h + 1) & mask


# ---------------------------------------------------------------------------
# Per-row product kernels.
#
# Argument conventions (shared by everything below):
#   ad_*  A diagonal block, columns local to the owned row range of A.
#   ao_*  A off-diagonal block, columns compact; compact index k selects row k
#         of the gathered remote rows (their order matches A's column map).
#   pd_*  P diagonal block, columns local to [c_lo, c_hi); global = local+c_lo.
#   po_*  P off-diagonal block, compact columns mapped through p_colmap.
#   pr_*  gathered remote P rows, columns global.
#   c_lo, c_hi   the calling rank's owned column range of the product.
# Row sets/accumulators are keyed by *global* product columns.
# ---------------------------------------------------------------------------


@njit(cache=True)
def row_ap_symbolic(
    i,
    ad_ip, ad_j, ao_ip, ao_j,
    pd_ip, pd_j, po_ip, po_j, p_colmap,
    pr_ip, pr_j,
    c_lo, c_hi,
    rd_keys, rd_size, ro_keys, ro_size,
):
    """Structure of row i of A*P split into owned (rd) / remote (ro) columns."""
    for t in range(ad_ip[i], ad_ip[i + 1]):
        k = ad_j[t]
        for u in range(pd_ip[k], pd_ip[k + 1]):
            rd_keys, rd_size, _ = hs_insert(rd_keys, rd_size, pd_j[u] + c_lo)
        for u in range(po_ip[k], po_ip[k + 1]):
            ro_keys, ro_size, _ = hs_insert(ro_keys, ro_size, p_colmap[po_j[u]])
    for t in range(ao_ip[i], ao_ip[i + 1]):
        k = ao_j[t]
        for u in range(pr_ip[k], pr_ip[k + 1]):
            g = pr_j[u]
            if c_lo <= g < c_hi:
                rd_keys, rd_size, _ = hs_insert(rd_keys, rd_size, g)
            else:
                ro_keys, ro_size, _ = hs_insert(ro_keys, ro_size, g)
    return rd_keys, rd_size, ro_keys, ro_size


@njit(cache=True)
def row_ap_numeric(
    i,
    ad_ip, ad_j, ad_v, ao_ip, ao_j, ao_v,
    pd_ip, pd_j, pd_v, po_ip, po_j, po_v, p_colmap,
    pr_ip, pr_j, pr_v,
    c_lo,
    keys, vals, size,
):
    """Accumulate row i of A*P into a hash map keyed by global column."""
    for t in range(ad_ip[i], ad_ip[i + 1]):
        k = ad_j[t]
        a = ad_v[t]
        for u in range(pd_ip[k], pd_ip[k + 1]):
            keys, vals, size = hm_add(keys, vals, size, pd_j[u] + c_lo, a * pd_v[u])
        for u in range(po_ip[k], po_ip[k + 1]):
            keys, vals, size = hm_add(keys, vals, size, p_colmap[po_j[u]], a * po_v[u])
    for t in range(ao_ip[i], ao_ip[i + 1]):
        k = ao_j[t]
        a = ao_v[t]
        for u in range(pr_ip[k], pr_ip[k + 1]):
            keys, vals, size = hm_add(keys, vals, size, pr_j[u], a * pr_v[u])
    return keys, vals, size


# ---------------------------------------------------------------------------
# Whole-matrix drivers for the row-wise product C~ = A*P.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _append_grow(buf, length, extra):
    need = length + extra
    cap = buf.shape[0]
    if need <= cap:
        return buf
    while cap < need:
        cap *= 2
    grown = np.empty(cap, np.int64)
    grown[:length] = buf[:length]
    return grown


@njit(cache=True)
def ap_symbolic_driver(
    ad_ip, ad_j, ao_ip, ao_j,
    pd_ip, pd_j, po_ip, po_j, p_colmap,
    pr_ip, pr_j,
    c_lo, c_hi,
    nrows,
):
    """Counts and column structure of every row of A*P.

    Returns (nzd, nzo, diag_cols_local, off_cols_global, rd_cap, ro_cap);
    the two column arrays are row-major concatenations in sorted order.
    """
    nzd = np.zeros(nrows, np.int64)
    nzo = np.zeros(nrows, np.int64)
    rd_keys = hs_new(16)
    ro_keys = hs_new(16)
    dcols = np.empty(256, np.int64)
    ocols = np.empty(256, np.int64)
    dlen = 0
    olen = 0
    for i in range(nrows):
        rd_keys[:] = _EMPTY
        ro_keys[:] = _EMPTY
        rd_keys, rd_size, ro_keys, ro_size = row_ap_symbolic(
            i, ad_ip, ad_j, ao_ip, ao_j,
            pd_ip, pd_j, po_ip, po_j, p_colmap,
            pr_ip, pr_j, c_lo, c_hi,
            rd_keys, 0, ro_keys, 0,
        )
        nzd[i] = rd_size
        nzo[i] = ro_size
        dcols = _append_grow(dcols, dlen, rd_size)
        seg = hs_drain(rd_keys, rd_size)
        for t in range(rd_size):
            dcols[dlen + t] = seg[t] - c_lo
        dlen += rd_size
        ocols = _append_grow(ocols, olen, ro_size)
        seg = hs_drain(ro_keys, ro_size)
        for t in range(ro_size):
            ocols[olen + t] = seg[t]
        olen += ro_size
    return nzd, nzo, dcols[:dlen], ocols[:olen], rd_keys.shape[0], ro_keys.shape[0]


@njit(cache=True)
def ap_numeric_driver(
    ad_ip, ad_j, ad_v, ao_ip, ao_j, ao_v,
    pd_ip, pd_j, pd_v, po_ip, po_j, po_v, p_colmap,
    pr_ip, pr_j, pr_v,
    cd_ip, cd_j, cd_v, fill_d,
    co_ip, co_j, co_v, fill_o, c_colmap,
    c_lo, c_hi,
    nrows,
):
    """Fill the preallocated structure of C~ = A*P with values.

    Every row's accumulator must drain exactly onto the stored structure;
    returns (error_row, accumulator_capacity) with error_row = -1 on success.
    """
    keys = hs_new(16)
    vals = hm_new_vals(16)
    sj = np.empty(16, np.int64)
    sv = np.empty(16, np.float64)
    for i in range(nrows):
        keys[:] = _EMPTY
        keys, vals, size = row_ap_numeric(
            i, ad_ip, ad_j, ad_v, ao_ip, ao_j, ao_v,
            pd_ip, pd_j, pd_v, po_ip, po_j, po_v, p_colmap,
            pr_ip, pr_j, pr_v, c_lo,
            keys, vals, 0,
        )
        if sj.shape[0] < size:
            sj = np.empty(keys.shape[0], np.int64)
            sv = np.empty(keys.shape[0], np.float64)
        n = 0
        for slot in range(keys.shape[0]):
            if keys[slot] >= 0:
                sj[n] = keys[slot]
                sv[n] = vals[slot]
                n += 1
        order = np.argsort(sj[:n])
        dpos = cd_ip[i]
        opos = co_ip[i]
        for t in range(n):
            g = sj[order[t]]
            v = sv[order[t]]
            if c_lo <= g < c_hi:
                if dpos >= cd_ip[i + 1] or cd_j[dpos] != g - c_lo:
                    return i, keys.shape[0]
                cd_v[dpos] = v
                fill_d[dpos] = 1
                dpos += 1
            else:
                if opos >= co_ip[i + 1] or c_colmap[co_j[opos]] != g:
                    return i, keys.shape[0]
                co_v[opos] = v
                fill_o[opos] = 1
                opos += 1
        if dpos != cd_ip[i + 1] or opos != co_ip[i + 1]:
            return i, keys.shape[0]
    return -1, keys.shape[0]


# ---------------------------------------------------------------------------
# Outer-product drivers (all-at-once family).
#
# The send arena and local arena are hash sets over combined keys
# row*m_total + global_column, where row is a global row id for the send side
# and a local row id for the local side.
# ---------------------------------------------------------------------------


@njit(cache=True)
def outer_symbolic_driver(
    ad_ip, ad_j, ao_ip, ao_j,
    pd_ip, pd_j, po_ip, po_j, p_colmap,
    pr_ip, pr_j,
    c_lo, c_hi,
    nrows, m_total,
    do_send, do_local,
    skeys, ssize, lkeys, lsize,
):
    """Structural outer-product loops of the all-at-once symbolic phase.

    do_send/do_local select which of the two passes runs; both set => the
    merged single-pass variant.  Returns the updated arenas plus the number
    of rows whose A*P structure was actually computed.
    """
    rd_keys = hs_new(16)
    ro_keys = hs_new(16)
    rows_processed = 0
    for i in range(nrows):
        po_nonempty = po_ip[i] != po_ip[i + 1]
        pd_nonempty = pd_ip[i] != pd_ip[i + 1]
        want_send = do_send and po_nonempty
        want_local = do_local and pd_nonempty
        if not (want_send or want_local):
            continue
        rows_processed += 1
        rd_keys[:] = _EMPTY
        ro_keys[:] = _EMPTY
        rd_keys, rd_size, ro_keys, ro_size = row_ap_symbolic(
            i, ad_ip, ad_j, ao_ip, ao_j,
            pd_ip, pd_j, po_ip, po_j, p_colmap,
            pr_ip, pr_j, c_lo, c_hi,
            rd_keys, 0, ro_keys, 0,
        )
        if want_send:
            for t in range(po_ip[i], po_ip[i + 1]):
                base = p_colmap[po_j[t]] * m_total
                for slot in range(rd_keys.shape[0]):
                    k = rd_keys[slot]
                    if k >= 0:
                        skeys, ssize, _ = hs_insert(skeys, ssize, base + k)
                for slot in range(ro_keys.shape[0]):
                    k = ro_keys[slot]
                    if k >= 0:
                        skeys, ssize, _ = hs_insert(skeys, ssize, base + k)
        if want_local:
            for t in range(pd_ip[i], pd_ip[i + 1]):
                base = pd_j[t] * m_total
                for slot in range(rd_keys.shape[0]):
                    k = rd_keys[slot]
                    if k >= 0:
                        lkeys, lsize, _ = hs_insert(lkeys, lsize, base + k)
                for slot in range(ro_keys.shape[0]):
                    k = ro_keys[slot]
                    if k >= 0:
                        lkeys, lsize, _ = hs_insert(lkeys, lsize, base + k)
    return skeys, ssize, lkeys, lsize, rows_processed, rd_keys.shape[0], ro_keys.shape[0]


@njit(cache=True)
def _c_slot(i, g, cd_ip, cd_j, co_ip, co_j, c_colmap, c_lo, c_hi):
    """Locate global column g in local row i of the allocated C.

    Returns (block, pos): block 0 = diag, 1 = offdiag, -1 = not present.
    """
    if c_lo <= g < c_hi:
        jl = g - c_lo
        lo = cd_ip[i]
        hi = cd_ip[i + 1]
        pos = lo + np.searchsorted(cd_j[lo:hi], jl)
        if pos < hi and cd_j[pos] == jl:
            return 0, pos
        return -1, 0
    ci = np.searchsorted(c_colmap, g)
    if ci >= c_colmap.shape[0] or c_colmap[ci] != g:
        return -1, 0
    lo = co_ip[i]
    hi = co_ip[i + 1]
    pos = lo + np.searchsorted(co_j[lo:hi], ci)
    if pos < hi and co_j[pos] == ci:
        return 1, pos
    return -1, 0


@njit(cache=True)
def outer_numeric_driver(
    ad_ip, ad_j, ad_v, ao_ip, ao_j, ao_v,
    pd_ip, pd_j, pd_v, po_ip, po_j, po_v, p_colmap,
    pr_ip, pr_j, pr_v,
    c_lo, c_hi,
    nrows, do_send, do_local,
    s_rows, s_ip, s_cols, s_vals, s_fill,
    cd_ip, cd_j, cd_v, fill_d,
    co_ip, co_j, co_v, fill_o, c_colmap,
):
    """Numeric outer-product loops scattering into staging and into C.

    Returns (error_row, rows_processed, accumulator_capacity); error_row is
    the local A row at which a scatter target was missing, or -1.
    """
    keys = hs_new(16)
    vals = hm_new_vals(16)
    rows_processed = 0
    for i in range(nrows):
        po_nonempty = po_ip[i] != po_ip[i + 1]
        pd_nonempty = pd_ip[i] != pd_ip[i + 1]
        want_send = do_send and po_nonempty
        want_local = do_local and pd_nonempty
        if not (want_send or want_local):
            continue
        rows_processed += 1
        keys[:] = _EMPTY
        keys, vals, size = row_ap_numeric(
            i, ad_ip, ad_j, ad_v, ao_ip, ao_j, ao_v,
            pd_ip, pd_j, pd_v, po_ip, po_j, po_v, p_colmap,
            pr_ip, pr_j, pr_v, c_lo,
            keys, vals, 0,
        )
        if want_send:
            for t in range(po_ip[i], po_ip[i + 1]):
                c = p_colmap[po_j[t]]
                pv = po_v[t]
                r = np.searchsorted(s_rows, c)
                if r >= s_rows.shape[0] or s_rows[r] != c:
                    return i, rows_processed, keys.shape[0]
                lo = s_ip[r]
                hi = s_ip[r + 1]
                for slot in range(keys.shape[0]):
                    g = keys[slot]
                    if g < 0:
                        continue
                    pos = lo + np.searchsorted(s_cols[lo:hi], g)
                    if pos >= hi or s_cols[pos] != g:
                        return i, rows_processed, keys.shape[0]
                    s_vals[pos] += pv * vals[slot]
                    s_fill[pos] = 1
        if want_local:
            for t in range(pd_ip[i], pd_ip[i + 1]):
                ci = pd_j[t]
                pv = pd_v[t]
                for slot in range(keys.shape[0]):
                    g = keys[slot]
                    if g < 0:
                        continue
                    blk, pos = _c_slot(ci, g, cd_ip, cd_j, co_ip, co_j, c_colmap, c_lo, c_hi)
                    if blk < 0:
                        return i, rows_processed, keys.shape[0]
                    if blk == 0:
                        cd_v[pos] += pv * vals[slot]
                        fill_d[pos] = 1
                    else:
                        co_v[pos] += pv * vals[slot]
                        fill_o[pos] = 1
    return -1, rows_processed, keys.shape[0]


@njit(cache=True)
def arena_insert_pairs(keys, size, rows, ip, cols, m_total):
    """Insert batched (row, column) structure into a combined-key arena."""
    for b in range(rows.shape[0]):
        base = rows[b] * m_total
        for u in range(ip[b], ip[b + 1]):
            keys, size, _ = hs_insert(keys, size, base + cols[u])
    return keys, size


@njit(cache=True)
def scatter_add_rows(
    rows, ip, cols, vals,
    cd_ip, cd_j, cd_v, fill_d,
    co_ip, co_j, co_v, fill_o,
    c_colmap, c_lo, c_hi,
):
    """Add batched (local row, global column, value) entries into C."""
    for b in range(rows.shape[0]):
        i = rows[b]
        for u in range(ip[b], ip[b + 1]):
            blk, pos = _c_slot(i, cols[u], cd_ip, cd_j, co_ip, co_j, c_colmap, c_lo, c_hi)
            if blk < 0:
                return b
            if blk == 0:
                cd_v[pos] += vals[u]
                fill_d[pos] = 1
            else:
                co_v[pos] += vals[u]
                fill_o[pos] = 1
    return -1


# ---------------------------------------------------------------------------
# Local second-product kernels for the two-step method: Pt_o * C~ and
# Pt_d * C~ computed without any remote rows.  The left operand is a
# transposed P block whose columns index local rows of C~.
# ---------------------------------------------------------------------------


@njit(cache=True)
def local_spgemm_symbolic_arena(
    l_ip, l_j, nleft, targets,
    ctd_ip, ctd_j, cto_ip, cto_j, ct_colmap,
    c_lo,
    keys, size, m_total,
):
    """Structure of (left * C~) rows inserted into a combined-key arena.

    targets[r] is the arena row id (global for send-side, local otherwise)
    receiving the structure of left row r.
    """
    for r in range(nleft):
        if l_ip[r] == l_ip[r + 1]:
            continue
        base = targets[r] * m_total
        for t in range(l_ip[r], l_ip[r + 1]):
            k = l_j[t]
            for u in range(ctd_ip[k], ctd_ip[k + 1]):
                keys, size, _ = hs_insert(keys, size, base + ctd_j[u] + c_lo)
            for u in range(cto_ip[k], cto_ip[k + 1]):
                keys, size, _ = hs_insert(keys, size, base + ct_colmap[cto_j[u]])
    return keys, size


@njit(cache=True)
def local_spgemm_numeric_staging(
    l_ip, l_j, l_v, nleft, targets,
    ctd_ip, ctd_j, ctd_v, cto_ip, cto_j, cto_v, ct_colmap,
    c_lo,
    s_rows, s_ip, s_cols, s_vals, s_fill,
):
    """Numeric rows of (left * C~) written onto the staging structure.

    Each produced row must match its staged row exactly; returns
    (error_left_row, accumulator_capacity), error -1 on success.
    """
    keys = hs_new(16)
    vals = hm_new_vals(16)
    sj = np.empty(16, np.int64)
    sv = np.empty(16, np.float64)
    for r in range(nleft):
        if l_ip[r] == l_ip[r + 1]:
            continue
        keys[:] = _EMPTY
        size = 0
        for t in range(l_ip[r], l_ip[r + 1]):
            k = l_j[t]
            lv = l_v[t]
            for u in range(ctd_ip[k], ctd_ip[k + 1]):
                keys, vals, size = hm_add(keys, vals, size, ctd_j[u] + c_lo, lv * ctd_v[u])
            for u in range(cto_ip[k], cto_ip[k + 1]):
                keys, vals, size = hm_add(keys, vals, size, ct_colmap[cto_j[u]], lv * cto_v[u])
        if size == 0:
            continue
        rowpos = np.searchsorted(s_rows, targets[r])
        if rowpos >= s_rows.shape[0] or s_rows[rowpos] != targets[r]:
            return r, keys.shape[0]
        lo = s_ip[rowpos]
        hi = s_ip[rowpos + 1]
        if hi - lo != size:
            return r, keys.shape[0]
        if sj.shape[0] < size:
            sj = np.empty(keys.shape[0], np.int64)
            sv = np.empty(keys.shape[0], np.float64)
        n = 0
        for slot in range(keys.shape[0]):
            if keys[slot] >= 0:
                sj[n] = keys[slot]
                sv[n] = vals[slot]
                n += 1
        order = np.argsort(sj[:n])
        for t in range(n):
            g = sj[order[t]]
            if s_cols[lo + t] != g:
                return r, keys.shape[0]
            s_vals[lo + t] = sv[order[t]]
            s_fill[lo + t] = 1
    return -1, keys.shape[0]


@njit(cache=True)
def local_spgemm_numeric_into_c(
    l_ip, l_j, l_v, nleft, targets,
    ctd_ip, ctd_j, ctd_v, cto_ip, cto_j, cto_v, ct_colmap,
    ct_c_lo,
    cd_ip, cd_j, cd_v, fill_d,
    co_ip, co_j, co_v, fill_o, c_colmap,
    c_lo, c_hi,
):
    """Numeric rows of (left * C~) scatter-added into the allocated C."""
    keys = hs_new(16)
    vals = hm_new_vals(16)
    for r in range(nleft):
        if l_ip[r] == l_ip[r + 1]:
            continue
        keys[:] = _EMPTY
        size = 0
        for t in range(l_ip[r], l_ip[r + 1]):
            k = l_j[t]
            lv = l_v[t]
            for u in range(ctd_ip[k], ctd_ip[k + 1]):
                keys, vals, size = hm_add(keys, vals, size, ctd_j[u] + ct_c_lo, lv * ctd_v[u])
            for u in range(cto_ip[k], cto_ip[k + 1]):
                keys, vals, size = hm_add(keys, vals, size, ct_colmap[cto_j[u]], lv * cto_v[u])
        ci = targets[r]
        for slot in range(keys.shape[0]):
            g = keys[slot]
            if g < 0:
                continue
            blk, pos = _c_slot(ci, g, cd_ip, cd_j, co_ip, co_j, c_colmap, c_lo, c_hi)
            if blk < 0:
                return r, keys.shape[0]
            if blk == 0:
                cd_v[pos] += vals[slot]
                fill_d[pos] = 1
            else:
                co_v[pos] += vals[slot]
                fill_o[pos] = 1
    return -1, keys.shape[0]
