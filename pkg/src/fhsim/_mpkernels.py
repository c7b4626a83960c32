"""Numba kernels for Majorana-polynomial propagation.

Monomials are bit sets over Majorana indices split into two 64-bit words
(spin-up Majoranas in ``w0``, spin-down in ``w1``). Coefficients refer to
the Hermitian basis ``B_S = i^{k(k-1)/2} gamma_S`` (ascending product).
"""
from __future__ import annotations

import numpy as np
from numba import njit

_M1 = np.uint64(0x5555555555555555)
_M2 = np.uint64(0x3333333333333333)
_M4 = np.uint64(0x0F0F0F0F0F0F0F0F)
_H01 = np.uint64(0x0101010101010101)


@njit(cache=True, inline="always")
def popcount(x):
    x = x - ((x >> np.uint64(1)) & _M1)
    x = (x & _M2) + ((x >> np.uint64(2)) & _M2)
    x = (x + (x >> np.uint64(4))) & _M4
    return np.int64((x * _H01) >> np.uint64(56))


@njit(cache=True, inline="always")
def _mix(a, b):
    h = a ^ (b * np.uint64(0x9E3779B97F4A7C15))
    h ^= h >> np.uint64(30)
    h *= np.uint64(0xBF58476D1CE4E5B9)
    h ^= h >> np.uint64(27)
    h *= np.uint64(0x94D049BB133111EB)
    h ^= h >> np.uint64(31)
    return h


@njit(cache=True, inline="always")
def _hash(a, b, mask):
    return np.int64(_mix(a, b) & mask)


@njit(cache=True, inline="always")
def _below(w0, w1, word, bit):
    """Number of set bits strictly below global position (word, bit)."""
    if word == 0:
        return popcount(w0 & ((np.uint64(1) << np.uint64(bit)) - np.uint64(1)))
    return popcount(w0) + popcount(w1 & ((np.uint64(1) << np.uint64(bit)) - np.uint64(1)))


@njit(cache=True, inline="always")
def _touched(a, b, own0, own1, seen, out):
    """Distinct gate ids owning any set bit of ``(a, b)``; returns the count."""
    m = 0
    for word in range(2):
        x = a if word == 0 else b
        while x:
            low = x & (~x + np.uint64(1))
            bit = popcount(low - np.uint64(1))
            g = own0[bit] if word == 0 else own1[bit]
            x ^= low
            if g >= 0 and seen[g] == 0:
                seen[g] = 1
                out[m] = g
                m += 1
    for i in range(m):
        seen[out[i]] = 0
    return m


@njit(cache=True)
def bucket_rows(w0, w1, lo, hi, own0, own1, G):
    """Rows in ``[lo, hi)`` per gate, where ``own*[bit]`` is the gate owning a
    Majorana bit (or -1). Returns CSR ``(offsets, rows)``."""
    cnt = np.zeros(G + 1, np.int64)
    seen = np.zeros(G, np.int64)
    out = np.empty(128, np.int64)
    for k in range(lo, hi):
        m = _touched(w0[k], w1[k], own0, own1, seen, out)
        for i in range(m):
            cnt[out[i] + 1] += 1
    for g in range(G):
        cnt[g + 1] += cnt[g]
    rows = np.empty(cnt[G], np.int64)
    fill = cnt[:G].copy()
    for k in range(lo, hi):
        m = _touched(w0[k], w1[k], own0, own1, seen, out)
        for i in range(m):
            g = out[i]
            rows[fill[g]] = k
            fill[g] += 1
    return cnt, rows


@njit(cache=True)
def local_groups(w0, w1, c, rows, locw, locb, T, affected):
    """Group the candidate ``rows`` a 4-Majorana gate touches and conjugate them.

    ``T[l2, l]`` is the gate's transfer matrix in the local Hermitian basis
    (pattern bit ``i`` = local Majorana ``i``; locals sorted ascending).
    Terms are grouped by their bits outside the gate; returns the affected
    row indices, their group ids, each group's rest bits and the
    accumulated output coefficients ``acc[group, pattern]``.
    """
    m0 = np.uint64(0)
    m1 = np.uint64(0)
    for i in range(4):
        if locw[i] == 0:
            m0 |= np.uint64(1) << np.uint64(locb[i])
        else:
            m1 |= np.uint64(1) << np.uint64(locb[i])
    nr = rows.shape[0]
    idx = np.empty(nr, np.int64)
    pat = np.empty(nr, np.int64)
    j = 0
    for r in range(nr):
        k = rows[r]
        l = 0
        for i in range(4):
            w = w0[k] if locw[i] == 0 else w1[k]
            if (w >> np.uint64(locb[i])) & np.uint64(1):
                l |= 1 << i
        if affected[l]:
            idx[j] = k
            pat[j] = l
            j += 1
    n_aff = j
    idx = idx[:n_aff]
    pat = pat[:n_aff]
    # compact open-addressing table: (31-bit fingerprint << 32) | (group id + 1)
    cap = 1024
    while cap < n_aff // 2:
        cap *= 2
    tab = np.zeros(cap, np.int64)
    g0 = np.empty(n_aff, np.uint64)
    g1 = np.empty(n_aff, np.uint64)
    gneg = np.empty(n_aff, np.int64)
    gr = np.empty(n_aff, np.int64)
    grp = np.empty(n_aff, np.int64)
    low = np.int64(0xFFFFFFFF)
    ng = 0
    for j in range(n_aff):
        k = idx[j]
        r0 = w0[k] & ~m0
        r1 = w1[k] & ~m1
        hh = _mix(r0, r1)
        fp = np.int64(hh >> np.uint64(33))
        h = np.int64(hh & np.uint64(cap - 1))
        while True:
            e = tab[h]
            if e == 0:
                s = ng
                tab[h] = (fp << 32) | (s + 1)
                g0[s] = r0
                g1[s] = r1
                neg = 0
                for i in range(4):
                    if _below(r0, r1, locw[i], locb[i]) & 1:
                        neg |= 1 << i
                gneg[s] = neg
                gr[s] = popcount(r0) + popcount(r1)
                ng += 1
                if 2 * ng > cap:
                    # grow and reinsert every group
                    cap *= 2
                    tab = np.zeros(cap, np.int64)
                    for q in range(ng):
                        hq = _mix(g0[q], g1[q])
                        p = np.int64(hq & np.uint64(cap - 1))
                        while tab[p] != 0:
                            p = (p + 1) & (cap - 1)
                        tab[p] = (np.int64(hq >> np.uint64(33)) << 32) | (q + 1)
                break
            if (e >> 32) == fp:
                s = (e & low) - 1
                if g0[s] == r0 and g1[s] == r1:
                    break
            h = (h + 1) & (cap - 1)
        grp[j] = s
    size = np.zeros(16, np.int64)
    for l in range(16):
        size[l] = (l & 1) + ((l >> 1) & 1) + ((l >> 2) & 1) + ((l >> 3) & 1)
    # sparse columns of the transfer, with the rest-parity phase folded in
    nnz = np.zeros(16, np.int64)
    to = np.empty((16, 16), np.int64)
    tv = np.empty((2, 16, 16), np.float64)
    for l in range(16):
        for l2 in range(16):
            t = T[l2, l]
            if t != 0.0:
                m = nnz[l]
                to[l, m] = l2
                d = abs(size[l] - size[l2]) // 2
                tv[0, l, m] = t
                tv[1, l, m] = -t if d & 1 else t
                nnz[l] += 1
    nc = c.shape[1]
    acc = np.zeros((ng, 16, nc), np.float64)
    for j in range(n_aff):
        l = pat[j]
        s = grp[j]
        par = gr[s] & 1
        sl = -1.0 if popcount(np.uint64(l & gneg[s])) & 1 else 1.0
        k = idx[j]
        for m in range(nnz[l]):
            l2 = to[l, m]
            t = tv[par, l, m] * sl
            for q in range(nc):
                acc[s, l2, q] += c[k, q] * t
    for s in range(ng):
        for l2 in range(16):
            if popcount(np.uint64(l2 & gneg[s])) & 1:
                for q in range(nc):
                    acc[s, l2, q] = -acc[s, l2, q]
    return idx, pat, grp, g0[:ng], g1[:ng], acc


@njit(cache=True)
def permute_rows(w0, w1, c, rows, locw, locb, T):
    """In-place conjugation by a gate whose transfer is a signed permutation
    of local patterns: every term maps to exactly one term, so no grouping."""
    m0 = np.uint64(0)
    m1 = np.uint64(0)
    for i in range(4):
        if locw[i] == 0:
            m0 |= np.uint64(1) << np.uint64(locb[i])
        else:
            m1 |= np.uint64(1) << np.uint64(locb[i])
    to = np.empty(16, np.int64)
    tv = np.empty(16, np.float64)
    size = np.empty(16, np.int64)
    for l in range(16):
        size[l] = (l & 1) + ((l >> 1) & 1) + ((l >> 2) & 1) + ((l >> 3) & 1)
        for l2 in range(16):
            if T[l2, l] != 0.0:
                to[l] = l2
                tv[l] = T[l2, l]
    nc = c.shape[1]
    for r in range(rows.shape[0]):
        k = rows[r]
        a0 = w0[k]
        a1 = w1[k]
        l = 0
        for i in range(4):
            w = a0 if locw[i] == 0 else a1
            if (w >> np.uint64(locb[i])) & np.uint64(1):
                l |= 1 << i
        l2 = to[l]
        t = tv[l]
        if l2 == l and t == 1.0:
            continue
        r0 = a0 & ~m0
        r1 = a1 & ~m1
        neg = 0
        for i in range(4):
            if _below(r0, r1, locw[i], locb[i]) & 1:
                neg |= 1 << i
        if (popcount(r0) + popcount(r1)) & 1 and (abs(size[l] - size[l2]) // 2) & 1:
            t = -t
        if popcount(np.uint64((l & neg) ^ (l2 & neg))) & 1:
            t = -t
        for i in range(4):
            if (l2 >> i) & 1:
                if locw[i] == 0:
                    r0 |= np.uint64(1) << np.uint64(locb[i])
                else:
                    r1 |= np.uint64(1) << np.uint64(locb[i])
        w0[k] = r0
        w1[k] = r1
        for q in range(nc):
            c[k, q] *= t
    return 0


@njit(cache=True)
def write_back(w0, w1, c, n, idx, pat, grp, g0, g1, acc, locw, locb, tol):
    """Store ``acc`` in place: reuse the rows of existing monomials, append
    new ones after row ``n``. Rows whose coefficient vanished are zeroed.
    Returns the new row count and the number of zeroed rows."""
    ng = acc.shape[0]
    nc = acc.shape[2]
    done = np.zeros((ng, 16), np.bool_)
    big = np.zeros((ng, 16), np.bool_)
    for s in range(ng):
        for l2 in range(16):
            for q in range(nc):
                if abs(acc[s, l2, q]) > tol:
                    big[s, l2] = True
                    break
    dead = 0
    for j in range(idx.shape[0]):
        s = grp[j]
        l = pat[j]
        done[s, l] = True
        k = idx[j]
        if big[s, l]:
            for q in range(nc):
                c[k, q] = acc[s, l, q]
        else:
            for q in range(nc):
                c[k, q] = 0.0
            dead += 1
    for s in range(ng):
        for l2 in range(16):
            if done[s, l2] or not big[s, l2]:
                continue
            a0 = g0[s]
            a1 = g1[s]
            for i in range(4):
                if (l2 >> i) & 1:
                    if locw[i] == 0:
                        a0 |= np.uint64(1) << np.uint64(locb[i])
                    else:
                        a1 |= np.uint64(1) << np.uint64(locb[i])
            w0[n] = a0
            w1[n] = a1
            for q in range(nc):
                c[n, q] = acc[s, l2, q]
            n += 1
    return n, dead


@njit(cache=True)
def overlap(w0, w1, c, gw, gb, gsize, tables, tab_off):
    """Sums of ``c_S <psi|B_S|psi>`` (one per coefficient column) for a product of independent mode groups.

    Group ``g`` owns Majoranas ``(gw[g, i], gb[g, i])`` for ``i < gsize[g]``
    (sorted ascending); ``tables[tab_off[g] + pattern]`` is the local
    expectation of the Hermitian basis element for that pattern.
    """
    n = c.shape[0]
    G = gw.shape[0]
    # map every global Majorana to its group
    owner0 = -np.ones(64, np.int64)
    owner1 = -np.ones(64, np.int64)
    for g in range(G):
        for i in range(gsize[g]):
            if gw[g, i] == 0:
                owner0[gb[g, i]] = g
            else:
                owner1[gb[g, i]] = g
    total = np.zeros(c.shape[1])
    seen = np.zeros(G, np.int64)
    for k in range(n):
        val = 1.0
        for g in range(G):
            p = 0
            for i in range(gsize[g]):
                w = w0[k] if gw[g, i] == 0 else w1[k]
                if (w >> np.uint64(gb[g, i])) & np.uint64(1):
                    p |= 1 << i
            e = tables[tab_off[g] + p]
            if e == 0.0:
                val = 0.0
                break
            val *= e
        if val == 0.0:
            continue
        # reorder sign: ascending product -> group blocks in group order
        for g in range(G):
            seen[g] = 0
        inv = 0
        for word in range(2):
            w = w0[k] if word == 0 else w1[k]
            for b in range(64):
                if (w >> np.uint64(b)) & np.uint64(1):
                    g = owner0[b] if word == 0 else owner1[b]
                    for h in range(g + 1, G):
                        inv += seen[h]
                    seen[g] += 1
        if inv & 1:
            val = -val
        for q in range(c.shape[1]):
            total[q] += c[k, q] * val
    return total


@njit(cache=True)
def weights(w0, w1):
    n = w0.shape[0]
    out = np.empty(n, np.int64)
    for k in range(n):
        out[k] = popcount(w0[k]) + popcount(w1[k])
    return out
