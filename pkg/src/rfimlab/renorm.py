"""Good/bad box classification at the scales L_n = K^n floor(1/p), Monte Carlo
estimates of the bad-box probability, and the tile renormalisation that maps
zero-temperature Glauber onto modified bootstrap percolation.

A box B(x, L) is handled in local coordinates: an open box of side 2L + 1
whose centre sits at index L on every axis.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import binomtest

from .bootstrap import CLOSED, EMPTY, OPEN, BPRule, SiteConfig, bp_final, cluster_stats, sample_sites
from .disorder import DisorderField, open_closed_probs
from .glauber import glauber_at
from .lattice import Lattice, label_components

REASONS = ("clean", "confined", "clusters-too-large", "bad-subboxes-unconfined", "escape-from-3box")


@dataclass(frozen=True)
class ScaleLadder:
    K: int
    p: float
    D: int = 16

    def __post_init__(self) -> None:
        if self.K < 2:
            raise ValueError("K must be >= 2")
        if not 0 < self.p <= 1:
            raise ValueError("p must lie in (0, 1]")
        if self.D < 0:
            raise ValueError("D must be >= 0")

    @property
    def L0(self) -> int:
        return int(math.floor(1.0 / self.p))

    def L(self, n: int) -> int:
        if n < 0:
            raise ValueError("scale index must be >= 0")
        return self.K**n * self.L0

    def escape_radius(self, n: int) -> int:
        """floor(sqrt(K) * L_{n-1}), exact for square K."""
        r = math.isqrt(self.K)
        if r * r == self.K:
            return r * self.L(n - 1)
        return int(math.floor(math.sqrt(self.K) * self.L(n - 1)))

    def metadata(self) -> dict:
        return {"K": self.K, "p": self.p, "D": self.D, "L0": self.L0}


@dataclass
class BoxVerdict:
    center: tuple[int, ...]
    n: int
    good: bool
    reason: str
    witness: Optional[tuple[int, ...]] = None  # confining y, relative to the centre
    bad_subboxes: list = field(default_factory=list)

    @property
    def verdict(self) -> str:
        return "good" if self.good else "bad"


def _box_config(config: SiteConfig, L: int) -> SiteConfig:
    lat = config.lattice
    if lat.wrap or lat.shape != (2 * L + 1,) * lat.dim:
        raise ValueError(f"expected an open box of side {2 * L + 1}, got {lat.shape} (wrap={lat.wrap})")
    return config


def _sub(config: SiteConfig, offset: tuple[int, ...], r: int) -> SiteConfig:
    """Restriction to B(offset, r) in local coordinates of ``config``."""
    lat = config.lattice
    c = (lat.shape[0] - 1) // 2
    sl = tuple(slice(c + o - r, c + o + r + 1) for o in offset)
    state = config.state.reshape(lat.shape)[sl].ravel()
    init = config.initial_open.reshape(lat.shape)[sl].ravel()
    return SiteConfig(Lattice(lat.dim, 2 * r + 1, wrap=False), state.copy(), init.copy())


def classify_L0(config: SiteConfig, rule: BPRule, D: int, L0: Optional[int] = None, center=None) -> BoxVerdict:
    """Good iff every open cluster of the box's final configuration has
    diameter <= D."""
    lat = config.lattice
    if L0 is not None:
        _box_config(config, L0)
    final = bp_final(lat, config, rule)
    too_big = any(s.diameter > D for s in cluster_stats(final))
    center = center or (0,) * lat.dim
    return BoxVerdict(tuple(center), 0, not too_big, "clusters-too-large" if too_big else "clean")


def _grid(radius: int, step: int, dim: int):
    ticks = range(-(radius // step) * step, radius + 1, step)
    return itertools.product(ticks, repeat=dim)


def classify_Ln(config: SiteConfig, rule: BPRule, ladder: ScaleLadder, n: int, center=None) -> BoxVerdict:
    """Recursive verdict for the L_n-box held in ``config``."""
    if n < 0:
        raise ValueError("n must be >= 0")
    Ln = ladder.L(n)
    _box_config(config, Ln)
    center = tuple(center or (0,) * config.lattice.dim)
    if n == 0:
        return classify_L0(config, rule, ladder.D, center=center)
    d = config.lattice.dim
    Lm = ladder.L(n - 1)
    bad = []
    for z in _grid(Ln - Lm, Lm, d):
        sub = classify_Ln(_sub(config, z, Lm), rule, ladder, n - 1, center=z)
        if not sub.good:
            bad.append(z)
    if not bad:
        return BoxVerdict(center, n, True, "clean")
    bad_arr = np.array(bad)
    covers = [
        y for y in _grid(Ln + 3 * Lm, Lm, d)
        if np.abs(bad_arr - np.array(y)).max() <= 2 * Lm
    ]
    if not covers:
        return BoxVerdict(center, n, False, "bad-subboxes-unconfined", bad_subboxes=bad)
    lat = config.lattice
    final = bp_final(lat, config, rule)
    labels, _ = label_components(lat, final.open)
    local = lat.coords - Ln
    R = ladder.escape_radius(n)
    for y in covers:
        dist = np.abs(local - np.array(y)).max(axis=1)
        touching = np.unique(labels[(dist <= 3 * Lm) & (labels > 0)])
        members = np.isin(labels, touching)
        if not members.any() or dist[members].max() <= R:
            return BoxVerdict(center, n, True, "confined", witness=y, bad_subboxes=bad)
    return BoxVerdict(center, n, False, "escape-from-3box", witness=covers[0], bad_subboxes=bad)


PN_COLUMNS = ["n", "L_n", "trials", "bad_freq", "ci_lo", "ci_hi", "partial", "config_hash"]


def wilson_interval(k: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    if trials == 0:
        return 0.0, 1.0
    ci = binomtest(k, trials).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def estimate_pn(
    d: int,
    p: float,
    q: float,
    K: int,
    n_values,
    seeds,
    D: int = 16,
    rule: Optional[BPRule] = None,
    max_sites: float = 5e9,
    max_seconds: Optional[float] = None,
    config_hash: str = "",
    scale_p: Optional[float] = None,
) -> list[dict]:
    """Frequency of bad L_n-boxes over the given seeds with Wilson 95% CIs.
    ``seeds`` may also be a trial count, meaning seeds 0..trials-1.
    ``scale_p`` sets the box scale L_0 = floor(1/scale_p) when it should
    differ from the sampling density p (needed for p = 0).

    Stops early and flags the row partial when the site or time budget runs
    out."""
    ladder = ScaleLadder(K, p if scale_p is None else scale_p, D)
    rule = rule or BPRule(d)
    seeds = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    rows = []
    start = time.monotonic()
    for n in n_values:
        Ln = ladder.L(n)
        lat = Lattice(d, 2 * Ln + 1, wrap=False)
        done = bad = 0
        partial = False
        for seed in seeds:
            over_sites = (done + 1) * lat.n * (n + 1) > max_sites
            over_time = max_seconds is not None and time.monotonic() - start > max_seconds
            if over_sites or over_time:
                partial = True
                break
            cfg = sample_sites(seed, lat, p, q)
            bad += not classify_Ln(cfg, rule, ladder, n).good
            done += 1
        lo, hi = wilson_interval(bad, done)
        rows.append(
            {
                "n": n,
                "L_n": Ln,
                "trials": done,
                "bad_freq": bad / done if done else float("nan"),
                "ci_lo": lo,
                "ci_hi": hi,
                "partial": partial,
                "config_hash": config_hash,
            }
        )
    return rows


# --- tile renormalisation ---------------------------------------------------------


def tile_side(p: float, d: int) -> int:
    """L = floor(-d log p / p)."""
    if not 0 < p < 1:
        raise ValueError(f"tile side needs 0 < p < 1, got {p}")
    return int(math.floor(-d * math.log(p) / p))


@dataclass
class Renormalized:
    coarse: SiteConfig
    rule: BPRule
    L: int
    p: float
    tiles: tuple[int, ...]

    def fine_mask(self, coarse_mask: np.ndarray, fine: Lattice) -> np.ndarray:
        """Fine vertices covered by the selected tiles."""
        grid = coarse_mask.reshape(self.tiles)
        for k in range(fine.dim):
            grid = np.repeat(grid, self.L, axis=k)
        out = np.zeros(fine.shape, dtype=bool)
        out[tuple(slice(0, t * self.L) for t in self.tiles)] = grid
        return out.ravel()


def box_renormalize(lattice: Lattice, field: DisorderField, eps: float, M: float) -> Renormalized:
    """Classify tiles x + [0, L)^d, x in L Z^d.

    open: every vertex has eps*h + M - 2d >= 0.
    empty: no vertex has eps*h + M < 0 and every axis line of the tile holds
    a vertex with eps*h + M - 2 >= 0.
    closed: otherwise.
    Tiles that do not fit are dropped; the coarse lattice is a torus only
    when the tiling wraps exactly.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    p = open_closed_probs(M, eps).p
    if p <= 0:
        raise ValueError("open probability is zero")
    d = lattice.dim
    L = tile_side(p, d) if p < 1 else 1
    if L < 1 or L > min(lattice.shape):
        raise ValueError(f"tile side {L} does not fit the lattice {lattice.shape}")
    tiles = tuple(n // L for n in lattice.shape)
    eh = (eps * field.values).reshape(lattice.shape)
    eh = eh[tuple(slice(0, t * L) for t in tiles)]
    # same operation order as the Glauber eligibility test (eh + sum) + M
    is_open = (eh - 2 * d) + M >= 0
    is_good = (eh - 2) + M >= 0
    is_bad = eh + M < 0
    # reshape to (t0, L, t1, L, ...)
    split = tuple(x for t in tiles for x in (t, L))
    tile_axes = tuple(range(1, 2 * d, 2))
    all_open = is_open.reshape(split).all(axis=tile_axes)
    any_bad = is_bad.reshape(split).any(axis=tile_axes)
    good = is_good.reshape(split)
    lines_ok = np.ones(tiles, dtype=bool)
    for k in tile_axes:
        # a line along axis k fixes every other in-tile coordinate
        has = good.any(axis=k, keepdims=True)
        lines_ok &= has.all(axis=tuple(a for a in tile_axes if a != k)).reshape(tiles)
    state = np.full(tiles, CLOSED, dtype=np.int8)
    state[~any_bad & lines_ok] = EMPTY
    state[all_open] = OPEN
    wrap = lattice.wrap and all(n % L == 0 for n in lattice.shape) and min(tiles) >= 3
    coarse_lat = Lattice.rect(tiles, wrap=wrap)
    coarse = SiteConfig(coarse_lat, state.ravel(), state.ravel() == OPEN)
    return Renormalized(coarse, BPRule(max(d - 1, 1), modified=True), L, p, tiles)


def renormalization_exceptions(lattice: Lattice, field: DisorderField, eps: float, M: float) -> dict:
    """Fine vertices inside coarse-open tiles (after coarse modified BP) that
    are minus in the zero-temperature Glauber state at M."""
    ren = box_renormalize(lattice, field, eps, M)
    final = bp_final(ren.coarse.lattice, ren.coarse, ren.rule)
    covered = ren.fine_mask(final.open, lattice)
    spins = glauber_at(lattice, field, eps, M)
    bad = covered & (spins < 0)
    return {
        "L": ren.L,
        "p": ren.p,
        "tiles": ren.tiles,
        "coarse_open_initial": float(ren.coarse.open.mean()),
        "coarse_open_final": float(final.open.mean()),
        "fine_plus": float((spins > 0).mean()),
        "exceptions": int(np.count_nonzero(bad)),
    }
