"""Zero-temperature Glauber cascade in M and the positive-temperature heat bath.

A minus vertex v is eligible at M when g_v + M >= 0, where
g_v = eps*h_v + (sum of neighbour spins).  ``-g_v`` is its trigger threshold.
Every engine here evaluates g_v with the same operation order so that the
event-driven and fixed-point paths agree bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np
from numba import njit

from .disorder import DisorderField
from .lattice import Lattice

BOUNDARIES = ("torus", "minus", "free")


def _geometry(lattice: Lattice, boundary: str) -> tuple[np.ndarray, np.ndarray]:
    """Neighbour table and the frozen contribution of absent neighbours."""
    if boundary not in BOUNDARIES:
        raise ValueError(f"boundary must be one of {BOUNDARIES}, got {boundary!r}")
    if (boundary == "torus") != lattice.wrap:
        raise ValueError(f"boundary {boundary!r} does not match lattice wrap={lattice.wrap}")
    tab = np.ascontiguousarray(lattice.neighbor_table)
    missing = (tab < 0).sum(axis=1)
    ghost = -missing if boundary == "minus" else np.zeros(lattice.n, dtype=np.int64)
    return tab, ghost.astype(np.int64)


def _initial_sums(tab: np.ndarray, ghost: np.ndarray) -> np.ndarray:
    return -(tab >= 0).sum(axis=1).astype(np.int64) + ghost


# --- binary heap on (key, id) pairs, smallest first ---------------------------


@njit(cache=True, inline="always")
def _less(k1, i1, k2, i2):
    return k1 < k2 or (k1 == k2 and i1 < i2)


@njit(cache=True)
def _heap_push(keys, ids, size, k, i):
    pos = size
    keys[pos] = k
    ids[pos] = i
    while pos > 0:
        parent = (pos - 1) // 2
        if _less(keys[pos], ids[pos], keys[parent], ids[parent]):
            keys[pos], keys[parent] = keys[parent], keys[pos]
            ids[pos], ids[parent] = ids[parent], ids[pos]
            pos = parent
        else:
            break
    return size + 1


@njit(cache=True)
def _heap_pop(keys, ids, size):
    size -= 1
    keys[0] = keys[size]
    ids[0] = ids[size]
    pos = 0
    while True:
        left = 2 * pos + 1
        if left >= size:
            break
        child = left
        if left + 1 < size and _less(keys[left + 1], ids[left + 1], keys[left], ids[left]):
            child = left + 1
        if _less(keys[child], ids[child], keys[pos], ids[pos]):
            keys[pos], keys[child] = keys[child], keys[pos]
            ids[pos], ids[child] = ids[child], ids[pos]
            pos = child
        else:
            break
    return size


@njit(cache=True)
def _evolve(tab, eh, spins, nsum, M_end, flip_M):
    """Advance the cascade from the given state up to M_end.

    Returns flip order, per-flip event index, per-flip plus-neighbour count,
    and per-event (M, seed vertex, size)."""
    n, deg = tab.shape
    cap = n * (deg + 2) + 1
    keys = np.empty(cap, np.float64)
    ids = np.empty(cap, np.int64)
    size = 0
    for v in range(n):
        if spins[v] < 0:
            size = _heap_push(keys, ids, size, -(eh[v] + nsum[v]), v)
    order = np.empty(n, np.int64)
    flip_event = np.empty(n, np.int64)
    nplus = np.empty(n, np.int64)
    ev_M = np.empty(n, np.float64)
    ev_seed = np.empty(n, np.int64)
    ev_size = np.empty(n, np.int64)
    nflip = 0
    nev = 0
    stack = np.empty(n, np.int64)
    queued = np.zeros(n, np.bool_)
    while size > 0:
        thr = keys[0]
        v = ids[0]
        if spins[v] > 0 or thr != -(eh[v] + nsum[v]):
            size = _heap_pop(keys, ids, size)
            continue
        if thr > M_end:
            break
        size = _heap_pop(keys, ids, size)
        M = thr
        ev_M[nev] = M
        ev_seed[nev] = v
        count = 0
        top = 0
        stack[top] = v
        top += 1
        queued[v] = True
        while top > 0:
            top -= 1
            u = stack[top]
            queued[u] = False
            if spins[u] > 0:
                continue
            k = 0
            for j in range(deg):
                w = tab[u, j]
                if w >= 0 and spins[w] > 0:
                    k += 1
            spins[u] = 1
            flip_M[u] = M
            order[nflip] = u
            flip_event[nflip] = nev
            nplus[nflip] = k
            nflip += 1
            count += 1
            for j in range(deg):
                w = tab[u, j]
                if w < 0:
                    continue
                nsum[w] += 2
                if spins[w] < 0:
                    g = eh[w] + nsum[w]
                    if g + M >= 0:
                        if not queued[w]:
                            queued[w] = True
                            stack[top] = w
                            top += 1
                    else:
                        size = _heap_push(keys, ids, size, -g, w)
        ev_size[nev] = count
        nev += 1
    return order[:nflip], flip_event[:nflip], nplus[:nflip], ev_M[:nev], ev_seed[:nev], ev_size[:nev]


@njit(cache=True)
def _fixed_point(tab, eh, spins, nsum, M):
    n, deg = tab.shape
    stack = np.empty(n, np.int64)
    queued = np.zeros(n, np.bool_)
    top = 0
    for v in range(n):
        if spins[v] < 0 and eh[v] + nsum[v] + M >= 0:
            stack[top] = v
            top += 1
            queued[v] = True
    while top > 0:
        top -= 1
        u = stack[top]
        spins[u] = 1
        for j in range(deg):
            w = tab[u, j]
            if w < 0:
                continue
            nsum[w] += 2
            if spins[w] < 0 and not queued[w] and eh[w] + nsum[w] + M >= 0:
                queued[w] = True
                stack[top] = w
                top += 1


@dataclass
class AvalancheEvent:
    M: float
    seed_vertex: int
    flipped: np.ndarray  # linear indices in flip order
    plus_fraction_after: float

    @property
    def size(self) -> int:
        return len(self.flipped)


@dataclass
class GlauberState:
    """Spins plus cached neighbour sums; advance with :meth:`evolve`."""

    lattice: Lattice
    field: DisorderField
    eps: float
    boundary: str
    spins: np.ndarray
    nsum: np.ndarray
    flip_M: np.ndarray
    M: float = -np.inf
    # vertex -> number of plus neighbours when it flipped
    plus_at_flip: dict = dc_field(default_factory=dict)

    @classmethod
    def all_minus(cls, lattice, field, eps, boundary=None) -> "GlauberState":
        boundary = boundary or ("torus" if lattice.wrap else "minus")
        tab, ghost = _geometry(lattice, boundary)
        return cls(
            lattice,
            field,
            float(eps),
            boundary,
            np.full(lattice.n, -1, dtype=np.int8),
            _initial_sums(tab, ghost),
            np.full(lattice.n, np.inf),
        )

    @property
    def eh(self) -> np.ndarray:
        return self.eps * self.field.values

    def local_fields(self) -> np.ndarray:
        return self.eh + self.nsum

    def thresholds(self) -> np.ndarray:
        return -(self.eh + self.nsum)

    def evolve(self, M_end: float) -> list[AvalancheEvent]:
        if M_end < self.M:
            raise ValueError(f"cannot evolve backwards from {self.M} to {M_end}")
        tab, _ = _geometry(self.lattice, self.boundary)
        order, fev, nplus, ev_M, ev_seed, ev_size = _evolve(
            tab, self.eh, self.spins, self.nsum, float(M_end), self.flip_M
        )
        self.M = float(M_end)
        self.plus_at_flip.update(zip(order.tolist(), nplus.tolist()))
        before = int(np.count_nonzero(self.spins > 0)) - len(order)
        events = []
        offsets = np.concatenate([[0], np.cumsum(ev_size)])
        for e in range(len(ev_M)):
            flipped = order[offsets[e]:offsets[e + 1]]
            frac = (before + offsets[e + 1]) / self.lattice.n
            events.append(AvalancheEvent(float(ev_M[e]), int(ev_seed[e]), flipped, frac))
        return events


def glauber_evolve(
    lattice: Lattice,
    field: DisorderField,
    eps: float,
    M_end: float,
    boundary: str | None = None,
) -> tuple[list[AvalancheEvent], GlauberState]:
    """Event-driven cascade from all-minus at M = -inf up to M_end."""
    state = GlauberState.all_minus(lattice, field, eps, boundary)
    events = state.evolve(M_end)
    return events, state


def glauber_at(
    lattice: Lattice, field: DisorderField, eps: float, M: float, boundary: str | None = None
) -> np.ndarray:
    """Fixed point of the eligibility rule started from all-minus."""
    state = GlauberState.all_minus(lattice, field, eps, boundary)
    tab, _ = _geometry(lattice, state.boundary)
    _fixed_point(tab, state.eh, state.spins, state.nsum, float(M))
    return state.spins


def plus_fraction_curve(events: Sequence[AvalancheEvent], n: int, grid: np.ndarray) -> np.ndarray:
    """Plus fraction at each grid M implied by an event list."""
    if not events:
        return np.zeros(len(grid))
    Ms = np.array([e.M for e in events])
    cum = np.cumsum([e.size for e in events])
    idx = np.searchsorted(Ms, grid, side="right")
    return np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0) / n


def domination_violations(state: GlauberState) -> list[int]:
    """Vertices whose flip contradicts the open/empty/closed neighbour counts.

    At its flip time M_f a vertex with k plus neighbours satisfies
    2k - 2d + M_f + eps*h >= 0.  Hence closed sites (eps*h + M_f < 0) need
    k >= d+1 and empty sites need k >= d; open sites are unconstrained.
    Only meaningful when every vertex has 2d neighbours or frozen-minus ghosts.
    """
    if state.boundary == "free":
        raise ValueError("the neighbour-count chain needs a torus or a minus boundary")
    d = state.lattice.dim
    eh = state.eh
    bad = []
    for v, k in state.plus_at_flip.items():
        x = eh[v] + state.flip_M[v]
        if x < 0 and k < d + 1:
            bad.append(v)
        elif 0 <= x < 2 and k < d:
            bad.append(v)
    return bad


def ground_state_domination(glauber_spins: np.ndarray, gs_spins: np.ndarray) -> dict:
    """Measure whether the Glauber state sits pointwise below a ground state."""
    above = (glauber_spins > gs_spins)
    return {"dominated": not bool(above.any()), "excess_plus": int(np.count_nonzero(above))}


# --- positive temperature -----------------------------------------------------


@njit(cache=True)
def _plus_prob(g, T):
    # P[plus] = 1 / (1 + exp(-2 g / T)); dH = H(+) - H(-) = -2 g
    x = 2.0 * g / T
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    z = np.exp(x)
    return z / (1.0 + z)


@njit(cache=True)
def _heat_bath(tab, eh, spins, nsum, times, verts, coins, T):
    deg = tab.shape[1]
    for r in range(len(times)):
        v = verts[r]
        g = eh[v] + nsum[v] + times[r]
        new = 1 if coins[r] < _plus_prob(g, T) else -1
        if new != spins[v]:
            delta = 2 * new
            spins[v] = new
            for j in range(deg):
                w = tab[v, j]
                if w >= 0:
                    nsum[w] += delta


def plus_probability(g: float, T: float) -> float:
    """Heat-bath probability of plus given the local field g = sum + M + eps*h."""
    if T <= 0:
        raise ValueError("T must be positive")
    return float(_plus_prob(float(g), float(T)))


@dataclass
class TrajectorySample:
    M: float
    magnetization: float
    plus_fraction: float


def positive_T_glauber(
    lattice: Lattice,
    field: DisorderField,
    eps: float,
    T: float,
    alpha: float,
    M_lo: float,
    M_hi: float,
    seed: int,
    grid: Sequence[float] | None = None,
    boundary: str | None = None,
) -> list[TrajectorySample]:
    """Heat-bath dynamics with M increasing at unit speed from M_lo to M_hi.

    Each vertex carries a rate-alpha Poisson clock.  Rings in each grid cell
    are drawn as a Poisson count of uniform (time, vertex) pairs, which is the
    same superposed process.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if M_hi < M_lo:
        raise ValueError("M_hi must be >= M_lo")
    grid = np.linspace(M_lo, M_hi, 33) if grid is None else np.asarray(grid, dtype=float)
    if (np.diff(grid) < 0).any() or grid[0] < M_lo or grid[-1] > M_hi:
        raise ValueError("grid must be sorted inside [M_lo, M_hi]")
    state = GlauberState.all_minus(lattice, field, eps, boundary)
    tab, _ = _geometry(lattice, state.boundary)
    rng = np.random.default_rng([int(seed) & ((1 << 64) - 1), 0x7E47])
    n = lattice.n
    eh = state.eh
    out = []
    t = float(M_lo)
    for target in grid:
        span = float(target) - t
        if span > 0:
            count = rng.poisson(n * alpha * span)
            times = np.sort(rng.uniform(t, target, count))
            verts = rng.integers(0, n, count)
            coins = rng.random(count)
            _heat_bath(tab, eh, state.spins, state.nsum, times, verts, coins, float(T))
            t = float(target)
        m = float(state.spins.mean())
        out.append(TrajectorySample(float(target), m, (m + 1) / 2))
    return out
