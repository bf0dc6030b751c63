"""Highest-label push-relabel max-flow with gap and global-relabel heuristics.

Only the first phase is run: a maximum preflow is enough to read off the
minimum cut whose sink side is smallest, which is all the ground-state
solver needs.
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _global_relabel(n, t, first, head, cap, rev, h):
    for v in range(n):
        h[v] = n
    h[t] = 0
    queue = np.empty(n, np.int64)
    qh = 0
    qt = 0
    queue[qt] = t
    qt += 1
    while qh < qt:
        v = queue[qh]
        qh += 1
        for a in range(first[v], first[v + 1]):
            u = head[a]
            if h[u] == n and cap[rev[a]] > 0:
                h[u] = h[v] + 1
                queue[qt] = u
                qt += 1


@njit(cache=True)
def _rebuild(n, s, t, h, excess, cnt, bhead, bnext):
    for k in range(n + 1):
        cnt[k] = 0
        bhead[k] = -1
    hmax = -1
    for v in range(n):
        if h[v] < n:
            cnt[h[v]] += 1
            if v != s and v != t and excess[v] > 0:
                bnext[v] = bhead[h[v]]
                bhead[h[v]] = v
                if h[v] > hmax:
                    hmax = h[v]
    return hmax


@njit(cache=True)
def _preflow(n, s, t, first, head, cap, rev):
    h = np.zeros(n, np.int64)
    excess = np.zeros(n, np.int64)
    cur = first[:-1].copy()
    cnt = np.zeros(n + 1, np.int64)
    bhead = np.full(n + 1, -1, np.int64)
    bnext = np.full(n, -1, np.int64)

    for a in range(first[s], first[s + 1]):
        f = cap[a]
        if f > 0:
            cap[a] = 0
            cap[rev[a]] += f
            excess[head[a]] += f
            excess[s] -= f

    _global_relabel(n, t, first, head, cap, rev, h)
    h[s] = n
    hmax = _rebuild(n, s, t, h, excess, cnt, bhead, bnext)
    work = 0
    while True:
        while hmax >= 0 and bhead[hmax] == -1:
            hmax -= 1
        if hmax < 0:
            break
        u = bhead[hmax]
        bhead[hmax] = bnext[u]
        if h[u] != hmax or h[u] >= n:
            continue
        while excess[u] > 0:
            a = cur[u]
            if a == first[u + 1]:
                # relabel
                old = h[u]
                newh = 2 * n
                for b in range(first[u], first[u + 1]):
                    if cap[b] > 0 and h[head[b]] + 1 < newh:
                        newh = h[head[b]] + 1
                cnt[old] -= 1
                cur[u] = first[u]
                work += 1
                if cnt[old] == 0:
                    # gap: nothing above `old` can reach the sink any more
                    for v in range(n):
                        if old < h[v] < n:
                            cnt[h[v]] -= 1
                            h[v] = n
                    h[u] = n
                    break
                if newh >= n:
                    h[u] = n
                    break
                h[u] = newh
                cnt[newh] += 1
                continue
            v = head[a]
            if cap[a] > 0 and h[u] == h[v] + 1:
                delta = excess[u] if excess[u] < cap[a] else cap[a]
                cap[a] -= delta
                cap[rev[a]] += delta
                excess[u] -= delta
                was = excess[v]
                excess[v] += delta
                if was <= 0 and v != s and v != t and h[v] < n:
                    bnext[v] = bhead[h[v]]
                    bhead[h[v]] = v
                    if h[v] > hmax:
                        hmax = h[v]
            else:
                cur[u] += 1
        if work > n:
            work = 0
            _global_relabel(n, t, first, head, cap, rev, h)
            h[s] = n
            for v in range(n):
                cur[v] = first[v]
            hmax = _rebuild(n, s, t, h, excess, cnt, bhead, bnext)
    return excess[t]


@njit(cache=True)
def _reaches_sink(n, t, first, head, cap, rev):
    mark = np.zeros(n, np.bool_)
    queue = np.empty(n, np.int64)
    qh = 0
    qt = 0
    mark[t] = True
    queue[qt] = t
    qt += 1
    while qh < qt:
        v = queue[qh]
        qh += 1
        for a in range(first[v], first[v + 1]):
            u = head[a]
            if not mark[u] and cap[rev[a]] > 0:
                mark[u] = True
                queue[qt] = u
                qt += 1
    return mark


class FlowNetwork:
    """Directed network built from arc pairs (u -> v with cap, v -> u with rcap)."""

    def __init__(self, n: int, tails, heads, caps, rcaps):
        tails = np.asarray(tails, dtype=np.int64)
        heads = np.asarray(heads, dtype=np.int64)
        caps = np.asarray(caps, dtype=np.int64)
        rcaps = np.asarray(rcaps, dtype=np.int64)
        if (caps < 0).any() or (rcaps < 0).any():
            raise ValueError("capacities must be nonnegative")
        m = len(tails)
        # arc 2i is the forward copy of pair i, 2i+1 its reverse
        src = np.empty(2 * m, np.int64)
        dst = np.empty(2 * m, np.int64)
        cap = np.empty(2 * m, np.int64)
        src[0::2], src[1::2] = tails, heads
        dst[0::2], dst[1::2] = heads, tails
        cap[0::2], cap[1::2] = caps, rcaps
        order = np.argsort(src, kind="stable")
        pos = np.empty_like(order)
        pos[order] = np.arange(2 * m)
        self.n = n
        self.head = dst[order]
        self.cap = cap[order]
        self.rev = pos[order ^ 1]
        self.first = np.searchsorted(src[order], np.arange(n + 1)).astype(np.int64)

    def min_cut(self, s: int, t: int) -> tuple[int, np.ndarray]:
        """Max-flow value and the mask of nodes on the minimal sink side."""
        cap = self.cap.copy()
        value = _preflow(self.n, s, t, self.first, self.head, cap, self.rev)
        sink_side = _reaches_sink(self.n, t, self.first, self.head, cap, self.rev)
        return int(value), sink_side
