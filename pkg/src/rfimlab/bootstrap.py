"""Polluted bootstrap percolation: final configurations, staged box evolution,
cluster statistics and the diameter potential U.

Site states are int8: 0 empty, 1 open, 2 closed.  ``initial_open`` records
which open sites were open from the start.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from numba import njit
from scipy import ndimage

from .disorder import STREAM_SITES, hashed_uniforms
from .lattice import Lattice, axis_extents, label_components

EMPTY, OPEN, CLOSED = 0, 1, 2


@dataclass
class SiteConfig:
    lattice: Lattice
    state: np.ndarray
    initial_open: np.ndarray

    def __post_init__(self) -> None:
        self.state = np.asarray(self.state, dtype=np.int8)
        self.initial_open = np.asarray(self.initial_open, dtype=bool)
        if self.state.shape != (self.lattice.n,) or self.initial_open.shape != (self.lattice.n,):
            raise ValueError("site arrays must have one entry per vertex")
        if (self.initial_open & (self.state != OPEN)).any():
            raise ValueError("an initially open site must be open")

    @classmethod
    def from_state(cls, lattice: Lattice, state: np.ndarray) -> "SiteConfig":
        """Treat every open site as initially open."""
        state = np.asarray(state, dtype=np.int8).ravel()
        return cls(lattice, state, state == OPEN)

    @property
    def open(self) -> np.ndarray:
        return self.state == OPEN

    @property
    def closed(self) -> np.ndarray:
        return self.state == CLOSED

    @property
    def grown(self) -> np.ndarray:
        return self.open & ~self.initial_open

    def copy(self) -> "SiteConfig":
        return SiteConfig(self.lattice, self.state.copy(), self.initial_open.copy())

    def __eq__(self, other) -> bool:
        if not isinstance(other, SiteConfig):
            return NotImplemented
        return (
            self.lattice == other.lattice
            and np.array_equal(self.state, other.state)
            and np.array_equal(self.initial_open, other.initial_open)
        )


@dataclass(frozen=True)
class BPRule:
    """Opening rule.

    ``modified`` counts axes with at least one open neighbour instead of open
    neighbours.  ``closed_flippable_at`` lets closed sites open once that
    many neighbours (or axes) are open; None keeps them closed forever.
    """

    threshold: int
    modified: bool = False
    closed_flippable_at: Optional[int] = None

    def __post_init__(self) -> None:
        if self.threshold < 1:
            raise ValueError("threshold must be >= 1")
        if self.closed_flippable_at is not None and self.closed_flippable_at < 1:
            raise ValueError("closed_flippable_at must be >= 1")

    def check(self, dim: int) -> None:
        top = dim if self.modified else 2 * dim
        if self.threshold > top:
            raise ValueError(f"threshold {self.threshold} exceeds {top} for d={dim}")

    @property
    def closed_code(self) -> int:
        return 0 if self.closed_flippable_at is None else int(self.closed_flippable_at)

    def describe(self) -> dict:
        return {
            "threshold": self.threshold,
            "modified": self.modified,
            "direction_counting": "axes" if self.modified else "neighbours",
            "closed_flippable_at": self.closed_flippable_at,
        }


def sample_sites(seed: int, lattice: Lattice, p: float, q: float) -> SiteConfig:
    """One uniform u per site: closed if u < q, open if u > 1 - p.

    The shared uniforms couple all (p, q) monotonically."""
    if not (0 <= p <= 1 and 0 <= q <= 1) or p + q > 1:
        raise ValueError(f"need p, q in [0, 1] with p + q <= 1, got p={p}, q={q}")
    u = hashed_uniforms(seed, np.arange(lattice.n), STREAM_SITES)
    state = np.zeros(lattice.n, dtype=np.int8)
    state[u > 1.0 - p] = OPEN
    state[u < q] = CLOSED
    return SiteConfig(lattice, state, state == OPEN)


# --- engine ---------------------------------------------------------------------


@njit(cache=True)
def _support(tab, state, v, modified):
    deg = tab.shape[1]
    c = 0
    if modified:
        for k in range(deg // 2):
            a = tab[v, 2 * k]
            b = tab[v, 2 * k + 1]
            if (a >= 0 and state[a] == 1) or (b >= 0 and state[b] == 1):
                c += 1
    else:
        for j in range(deg):
            w = tab[v, j]
            if w >= 0 and state[w] == 1:
                c += 1
    return c


@njit(cache=True)
def _eligible(tab, state, v, r, modified, closed_at):
    s = state[v]
    if s == 1:
        return False
    if s == 2 and closed_at == 0:
        return False
    need = r if s == 0 else closed_at
    return _support(tab, state, v, modified) >= need


@njit(cache=True)
def _run(tab, state, r, modified, closed_at):
    """Open sites until no site is eligible; returns the opening order."""
    n, deg = tab.shape
    queue = np.empty(n, np.int64)
    inq = np.zeros(n, np.bool_)
    order = np.empty(n, np.int64)
    nopen = 0
    qh = 0
    qt = 0
    for v in range(n):
        if _eligible(tab, state, v, r, modified, closed_at):
            queue[qt % n] = v
            qt += 1
            inq[v] = True
    while qh < qt:
        v = queue[qh % n]
        qh += 1
        inq[v] = False
        if not _eligible(tab, state, v, r, modified, closed_at):
            continue
        state[v] = 1
        order[nopen] = v
        nopen += 1
        for j in range(deg):
            w = tab[v, j]
            if w >= 0 and not inq[w] and _eligible(tab, state, w, r, modified, closed_at):
                queue[qt % n] = w
                qt += 1
                inq[w] = True
    return order[:nopen]


def _run_on(tab: np.ndarray, state: np.ndarray, rule: BPRule) -> np.ndarray:
    return _run(tab, state, rule.threshold, rule.modified, rule.closed_code)


@dataclass
class BPTrace:
    """Initial configuration plus the order in which sites opened."""

    initial: SiteConfig
    order: Optional[np.ndarray]


def bp_final(lattice: Lattice, config: SiteConfig, rule: BPRule, trace: bool = False):
    """Final configuration of the queue-driven evolution.

    With ``trace=True`` returns (final, BPTrace)."""
    if config.lattice != lattice:
        raise ValueError("configuration lives on a different lattice")
    rule.check(lattice.dim)
    state = config.state.copy()
    order = _run_on(np.ascontiguousarray(lattice.neighbor_table), state, rule)
    final = SiteConfig(lattice, state, config.initial_open.copy())
    if trace:
        return final, BPTrace(config.copy(), order)
    return final


@njit(cache=True)
def _synchronous(tab, state, r, modified, closed_at):
    n = tab.shape[0]
    rounds = 0
    while True:
        flip = np.zeros(n, np.bool_)
        any_flip = False
        for v in range(n):
            if _eligible(tab, state, v, r, modified, closed_at):
                flip[v] = True
                any_flip = True
        if not any_flip:
            return rounds
        for v in range(n):
            if flip[v]:
                state[v] = 1
        rounds += 1


def bp_final_synchronous(lattice: Lattice, config: SiteConfig, rule: BPRule) -> SiteConfig:
    """Same fixed point reached by parallel rounds (an order-free reference)."""
    rule.check(lattice.dim)
    state = config.state.copy()
    _synchronous(np.ascontiguousarray(lattice.neighbor_table), state, rule.threshold, rule.modified, rule.closed_code)
    return SiteConfig(lattice, state, config.initial_open.copy())


@lru_cache(maxsize=64)
def _box_table(shape: tuple[int, ...]) -> np.ndarray:
    return np.ascontiguousarray(Lattice.rect(shape).neighbor_table)


def _box_slices(lattice: Lattice, L: int) -> Iterable[tuple[slice, ...]]:
    """B(x, L) for x in L Z^d, clipped to the box, skipping empty ones."""
    axes = []
    for n in lattice.shape:
        centers = range(0, n + L, L)
        axes.append([slice(max(c - L, 0), min(c + L + 1, n)) for c in centers if c - L < n])
    for idx in np.ndindex(*(len(a) for a in axes)):
        yield tuple(axes[k][i] for k, i in enumerate(idx))


def covering_schedule(lattice: Lattice, scales: Sequence[int]) -> list[int]:
    """The scales, extended by one covering the whole box when needed."""
    scales = [int(s) for s in scales]
    if any(s < 1 for s in scales) or any(b <= a for a, b in zip(scales, scales[1:])):
        raise ValueError(f"scales must be positive and increasing, got {scales}")
    cover = max(lattice.shape) - 1
    if not scales or scales[-1] < cover:
        scales.append(max(cover, scales[-1] + 1 if scales else cover))
    return scales


def bp_final_boxed(lattice: Lattice, config: SiteConfig, rule: BPRule, scales: Sequence[int]) -> SiteConfig:
    """Staged evolution: at stage t every box B(x, L_t), x in L_t Z^d, evolves
    on its own from the stage-start configuration; the stage result is the
    union of the boxes' open sets."""
    if lattice.wrap:
        raise ValueError("staged box evolution is defined on open boxes")
    rule.check(lattice.dim)
    state = config.state.reshape(lattice.shape).copy()
    for L in covering_schedule(lattice, scales):
        start = state.copy()
        for sl in _box_slices(lattice, L):
            sub = np.ascontiguousarray(start[sl]).ravel()
            _run_on(_box_table(start[sl].shape), sub, rule)
            region = state[sl]
            region[sub.reshape(region.shape) == OPEN] = OPEN
    return SiteConfig(lattice, state.ravel(), config.initial_open.copy())


# --- diameter potential U --------------------------------------------------------


@njit(cache=True)
def _find(parent, v):
    root = v
    while parent[root] != root:
        root = parent[root]
    while parent[v] != root:
        nxt = parent[v]
        parent[v] = root
        v = nxt
    return root


@njit(cache=True)
def _diam(lo, hi, root):
    best = 0
    for k in range(lo.shape[1]):
        if hi[root, k] - lo[root, k] > best:
            best = hi[root, k] - lo[root, k]
    return best


@njit(cache=True)
def _u_trace(tab, coords, is_open, order):
    n, deg = tab.shape
    d = coords.shape[1]
    parent = np.arange(n)
    lo = coords.copy()
    hi = coords.copy()

    # initial components
    for v in range(n):
        if is_open[v]:
            for j in range(deg):
                w = tab[v, j]
                if w >= 0 and is_open[w]:
                    a = _find(parent, v)
                    b = _find(parent, w)
                    if a != b:
                        parent[b] = a
                        for k in range(d):
                            lo[a, k] = min(lo[a, k], lo[b, k])
                            hi[a, k] = max(hi[a, k], hi[b, k])
    U = 0
    for v in range(n):
        if is_open[v] and _find(parent, v) == v:
            U += _diam(lo, hi, v) + 2
    out = np.empty(len(order) + 1, np.int64)
    out[0] = U
    for i in range(len(order)):
        v = order[i]
        is_open[v] = True
        U += 2
        for j in range(deg):
            w = tab[v, j]
            if w >= 0 and is_open[w]:
                a = _find(parent, v)
                b = _find(parent, w)
                if a != b:
                    U -= _diam(lo, hi, a) + _diam(lo, hi, b) + 4
                    parent[b] = a
                    for k in range(d):
                        lo[a, k] = min(lo[a, k], lo[b, k])
                        hi[a, k] = max(hi[a, k], hi[b, k])
                    U += _diam(lo, hi, a) + 2
        out[i + 1] = U
    return out


def u_values(trace: BPTrace) -> np.ndarray:
    """U = sum of open-cluster diameters + 2 * (number of open clusters),
    before the evolution and after every single opening."""
    if trace is None or trace.order is None:
        raise ValueError("U monitoring needs an evolution run with tracing enabled")
    lat = trace.initial.lattice
    if lat.wrap:
        raise ValueError("U tracing uses bounding boxes and needs an open box")
    return _u_trace(
        np.ascontiguousarray(lat.neighbor_table),
        lat.coords.astype(np.int64),
        trace.initial.open.copy(),
        np.asarray(trace.order, dtype=np.int64),
    )


def u_statistic(config: SiteConfig) -> int:
    """U recomputed from scratch for a single configuration."""
    stats = cluster_stats(config)
    return int(sum(s.diameter for s in stats) + 2 * len(stats))


def u_monitor(trace: BPTrace) -> bool:
    """True iff U never increased across any single opening."""
    U = u_values(trace)
    return bool((np.diff(U) <= 0).all())


# --- clusters ----------------------------------------------------------------------


@dataclass(frozen=True)
class ClusterStat:
    label: int
    size: int
    diameter: int
    initial_count: int

    @property
    def satisfies_seed_bound(self) -> bool:
        """At least (diameter + 1) / 2 initially open members."""
        return 2 * self.initial_count >= self.diameter + 1


def cluster_stats(config: SiteConfig) -> list[ClusterStat]:
    lat = config.lattice
    labels, count = label_components(lat, config.open)
    if count == 0:
        return []
    index = np.arange(1, count + 1)
    sizes = np.bincount(labels, minlength=count + 1)[1:]
    seeds = np.bincount(labels, weights=config.initial_open, minlength=count + 1)[1:]
    if lat.wrap:
        diam = [int(axis_extents(lat, labels == i).max()) for i in index]
    else:
        ext = [
            np.asarray(ndimage.maximum(lat.coords[:, k], labels, index))
            - np.asarray(ndimage.minimum(lat.coords[:, k], labels, index))
            for k in range(lat.dim)
        ]
        diam = np.max(ext, axis=0).astype(int).tolist()
    return [
        ClusterStat(int(i), int(sizes[i - 1]), int(diam[i - 1]), int(seeds[i - 1]))
        for i in index
    ]


def spans(config: SiteConfig) -> bool:
    """Some open cluster touches two opposite faces of the box."""
    lat = config.lattice
    labels, count = label_components(lat, config.open)
    if count == 0:
        return False
    grid = labels.reshape(lat.shape)
    for k in range(lat.dim):
        lo = np.unique(np.take(grid, 0, axis=k))
        hi = np.unique(np.take(grid, lat.shape[k] - 1, axis=k))
        if np.intersect1d(lo[lo > 0], hi[hi > 0]).size:
            return True
    return False


# --- parameter scan ----------------------------------------------------------------

PHASE_COLUMNS = ["p", "q", "trials", "density", "origin_open_freq", "spanning_freq", "seeds", "config_hash"]


def q_from_law(p: float, d: int, law: str, c: float) -> float:
    """``law`` is "power" (q = c p^d) or "fixed" (q = c)."""
    if law == "power":
        return c * p**d
    if law == "fixed":
        return c
    raise ValueError(f"unknown q law {law!r}")


def describe_seeds(seeds: Sequence[int]) -> str:
    seeds = list(seeds)
    if seeds == list(range(seeds[0], seeds[0] + len(seeds))):
        return f"{seeds[0]}..{seeds[-1]}"
    return " ".join(map(str, seeds))


def _phase_cell(args) -> dict:
    d, L, p, q, seed, rule, wrap = args
    lat = Lattice(d, L, wrap=wrap)
    final = bp_final(lat, sample_sites(seed, lat, p, q), rule)
    origin = lat.index((L // 2,) * d)
    return {
        "density": float(final.open.mean()),
        "origin": bool(final.open[origin]),
        "spanning": False if wrap else spans(final),
    }


def phase_scan(
    d: int,
    p_grid: Sequence[float],
    q_law: str,
    c: float,
    L: int,
    seeds: Sequence[int],
    rule: Optional[BPRule] = None,
    wrap: bool = False,
    map_fn: Callable = map,
    config_hash: str = "",
) -> list[dict]:
    """One row per p; every p reuses the same seeds (paired trials).

    ``map_fn`` may be a parallel map; rows only depend on the cell key."""
    rule = rule or BPRule(d)
    seeds = list(seeds)
    trials = len(seeds)
    cells = []
    for p in p_grid:
        q = q_from_law(p, d, q_law, c)
        for seed in seeds:
            cells.append((d, L, float(p), float(q), seed, rule, wrap))
    results = list(map_fn(_phase_cell, cells))
    rows = []
    for i, p in enumerate(p_grid):
        chunk = results[i * trials:(i + 1) * trials]
        q = cells[i * trials][3]
        rows.append(
            {
                "p": float(p),
                "q": q,
                "trials": trials,
                "density": float(np.mean([r["density"] for r in chunk])),
                "origin_open_freq": float(np.mean([r["origin"] for r in chunk])),
                "spanning_freq": float(np.mean([r["spanning"] for r in chunk])),
                "seeds": describe_seeds(seeds),
                "config_hash": config_hash,
            }
        )
    return rows
