"""Exact RFIM ground states through an s-t minimum cut.

Local fields are quantised to integers at ``SCALE = 2**32`` per unit of
coupling.  Source arcs carry ``2*max(F, 0)``, sink arcs ``2*max(-F, 0)`` and
each lattice edge ``2*SCALE`` in both directions, so the cut value equals
``(H + |E| + sum|f|) * SCALE`` exactly for the quantised problem.  Among all
minimisers the pointwise-maximal one (most plus spins) is returned: every
vertex that cannot reach the sink in the residual graph is plus.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .disorder import DisorderField, field_from_values
from .lattice import Lattice, axis_extents, inner_boundary, label_components, outer_boundary
from .maxflow import FlowNetwork

SCALE = 2**32
_CAP_LIMIT = 2**62

Boundary = Union[None, str, np.ndarray]


@dataclass
class EnergyModel:
    """RFIM energy on a lattice; ``boundary`` applies to open boxes only.

    ``boundary`` is None (free / torus), "plus", "minus", or an array of
    +-1 spins over the box padded by one layer on every side; only the outer
    shell of that array is read.
    """

    lattice: Lattice
    field: DisorderField
    eps: float
    M: float = 0.0
    boundary: Boundary = None
    _bfield: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.field.lattice != self.lattice:
            raise ValueError("disorder field lives on a different lattice")
        if self.boundary is not None and self.lattice.wrap:
            raise ValueError("boundary conditions need an open box, not a torus")
        if self._bfield is None:
            self._bfield = _boundary_field(self.lattice, self.boundary)

    def at(self, M: float) -> "EnergyModel":
        return EnergyModel(self.lattice, self.field, self.eps, M, self.boundary, self._bfield)

    def with_field(self, fld: DisorderField) -> "EnergyModel":
        return EnergyModel(self.lattice, fld, self.eps, self.M, self.boundary, self._bfield)

    @property
    def boundary_field(self) -> np.ndarray:
        """Sum of boundary spins adjacent to each vertex (integer units)."""
        if self._bfield is None:
            self._bfield = _boundary_field(self.lattice, self.boundary)
        return self._bfield

    def local_fields(self) -> np.ndarray:
        return self.M + self.eps * self.field.values

    def quantized_fields(self) -> np.ndarray:
        f = self.local_fields()
        bound = (np.abs(f).max(initial=0.0) + 2 * self.lattice.dim) * SCALE
        if 2 * bound * (self.lattice.n + 2 * len(self.lattice.edges) + 1) >= _CAP_LIMIT:
            raise OverflowError(
                f"fields up to {np.abs(f).max():.3g} overflow the 64-bit capacity budget "
                f"at scale 2^32 on {self.lattice.n} vertices"
            )
        return np.rint(f * SCALE).astype(np.int64) + self.boundary_field * SCALE


def _boundary_field(lattice: Lattice, boundary: Boundary) -> np.ndarray:
    out = np.zeros(lattice.n, dtype=np.int64)
    if boundary is None:
        return out
    missing = lattice.neighbor_table < 0
    if isinstance(boundary, str):
        if boundary not in ("plus", "minus"):
            raise ValueError(f"unknown boundary condition {boundary!r}")
        sign = 1 if boundary == "plus" else -1
        return sign * missing.sum(axis=1).astype(np.int64)
    xi = np.asarray(boundary)
    d = lattice.dim
    padded = tuple(s + 2 for s in lattice.shape)
    if xi.shape != padded:
        raise ValueError(f"explicit boundary must have shape {padded}, got {xi.shape}")
    if not np.isin(xi, (-1, 1)).all():
        raise ValueError("boundary spins must be +-1")
    pad = lattice.coords + 1
    for k in range(d):
        for j, step in enumerate((-1, 1)):
            col = missing[:, 2 * k + j]
            ghost = pad[col].copy()
            ghost[:, k] += step
            out[col] += xi[tuple(ghost.T)]
    return out


def hamiltonian(model: EnergyModel, config: np.ndarray) -> float:
    """H = -sum_edges s_u s_v - sum_v (M + eps h_v) s_v - boundary coupling."""
    s = _spins(model.lattice, config)
    e = model.lattice.edges
    inter = -float(np.sum(s[e[:, 0]] * s[e[:, 1]]))
    f = model.local_fields() + model.boundary_field
    return inter - float(np.dot(f, s))


def quantized_energy(model: EnergyModel, config: np.ndarray) -> int:
    """Energy of the quantised problem in units of 2^-32 (exact integer)."""
    s = _spins(model.lattice, config).astype(np.int64)
    e = model.lattice.edges
    F = model.quantized_fields()
    return int(-SCALE * np.sum(s[e[:, 0]] * s[e[:, 1]]) - np.dot(F, s))


def _spins(lattice: Lattice, config: np.ndarray) -> np.ndarray:
    s = np.asarray(config).ravel()
    if s.shape != (lattice.n,):
        raise ValueError(f"configuration has {s.size} spins, lattice has {lattice.n}")
    if not np.isin(s, (-1, 1)).all():
        raise ValueError("spins must be +-1")
    return s.astype(np.float64)


def solve_plus_set(n: int, edges: np.ndarray, F: np.ndarray) -> np.ndarray:
    """Maximal minimiser of -SCALE*sum_edges s s - sum F s as a plus mask."""
    F = np.asarray(F, dtype=np.int64)
    if n == 0:
        return np.zeros(0, dtype=bool)
    s, t = n, n + 1
    verts = np.arange(n, dtype=np.int64)
    pos = F > 0
    neg = F < 0
    m = len(edges)
    tails = np.concatenate([np.full(pos.sum(), s), verts[neg], edges[:, 0]])
    heads = np.concatenate([verts[pos], np.full(neg.sum(), t), edges[:, 1]])
    caps = np.concatenate([2 * F[pos], -2 * F[neg], np.full(m, 2 * SCALE)])
    rcaps = np.concatenate([np.zeros(pos.sum() + neg.sum(), np.int64), np.full(m, 2 * SCALE)])
    net = FlowNetwork(n + 2, tails, heads, caps, rcaps)
    _, sink_side = net.min_cut(s, t)
    return ~sink_side[:n]


def ground_state(model: EnergyModel) -> np.ndarray:
    """Pointwise-maximal minimiser of the (quantised) Hamiltonian, as +-1 int8."""
    plus = solve_plus_set(model.lattice.n, model.lattice.edges, model.quantized_fields())
    return np.where(plus, 1, -1).astype(np.int8)


def ground_energy(model: EnergyModel) -> float:
    return hamiltonian(model, ground_state(model))


def brute_force_ground_state(model: EnergyModel, max_vertices: int = 24) -> np.ndarray:
    """Exhaustive minimisation with the same maximal-plus tie-break."""
    n = model.lattice.n
    if n > max_vertices:
        raise ValueError(f"{n} vertices is too many for exhaustive search (limit {max_vertices})")
    e = model.lattice.edges
    F = model.quantized_fields()
    best = None
    join = np.zeros(n, dtype=bool)
    chunk = 1 << min(n, 16)
    bits = np.arange(n, dtype=np.int64)
    for start in range(0, 1 << n, chunk):
        codes = np.arange(start, min(start + chunk, 1 << n), dtype=np.int64)
        plus = (codes[:, None] >> bits) & 1
        s = 2 * plus - 1
        energy = -SCALE * np.sum(s[:, e[:, 0]] * s[:, e[:, 1]], axis=1) - s @ F
        low = energy.min()
        if best is None or low < best:
            best = low
            join[:] = False
        if low == best:
            join |= plus[energy == low].astype(bool).any(axis=0)
    config = np.where(join, 1, -1).astype(np.int8)
    # minimisers of a ferromagnetic binary energy are closed under joins
    if quantized_energy(model, config) != best:
        raise RuntimeError("join of minimisers is not a minimiser")
    return config


def flipped_energy_gap(model: EnergyModel, A: np.ndarray) -> float:
    """Ground energy with the disorder sign-flipped on A minus the original."""
    A = np.asarray(A, dtype=bool)
    flipped = model.with_field(model.field.flipped(A))
    return ground_energy(flipped) - ground_energy(model)


def has_interface(lattice: Lattice, config: np.ndarray, A: np.ndarray) -> bool:
    """True when config is constant on the inner boundary of A, constant on
    the outer boundary, and the two constants differ."""
    A = np.asarray(A, dtype=bool)
    if not A.any() or A.all():
        return False
    s = np.asarray(config).ravel()
    inner = s[inner_boundary(lattice, A)]
    outer = s[outer_boundary(lattice, A)]
    return bool(
        (np.all(inner == -1) and np.all(outer == 1)) or (np.all(inner == 1) and np.all(outer == -1))
    )


def global_spin_cluster(lattice: Lattice, config: np.ndarray, threshold: int) -> Optional[np.ndarray]:
    """The spin cluster whose removal leaves only components of sup-diameter
    at most ``threshold``, or None."""
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    s = np.asarray(config).ravel()
    candidates = []
    for sign in (1, -1):
        labels, count = label_components(lattice, s == sign)
        if count:
            sizes = np.bincount(labels)[1:]
            for lab in np.argsort(-sizes, kind="stable")[:4]:
                candidates.append((sizes[lab], labels == lab + 1))
    candidates.sort(key=lambda c: -c[0])
    for _, cluster in candidates:
        rest = ~cluster
        if not rest.any():
            return cluster
        rl, rc = label_components(lattice, rest)
        ok = True
        for lab in range(1, rc + 1):
            if axis_extents(lattice, rl == lab).max() > threshold:
                ok = False
                break
        if ok:
            return cluster
    return None


# ---------------------------------------------------------------- good vertices

def connected_sets(lattice: Lattice, root: int, max_size: int):
    """Yield every connected vertex set containing ``root`` of size <= max_size
    (Redelmeier's enumeration; each set exactly once, as a sorted tuple)."""
    tab = lattice.neighbor_table

    def extend(current: list[int], untried: list[int], seen: set[int]):
        yield tuple(sorted(current))
        if len(current) == max_size:
            return
        untried = list(untried)
        while untried:
            v = untried.pop()
            new_seen = set(seen)
            fresh = []
            for w in tab[v]:
                w = int(w)
                if w >= 0 and w not in new_seen:
                    new_seen.add(w)
                    fresh.append(w)
            yield from extend(current + [v], untried + fresh, new_seen)

    first = [int(w) for w in tab[root] if w >= 0]
    first = list(dict.fromkeys(first))
    yield from extend([root], first, {root, *first})


def _complement_connected(lattice: Lattice, A: np.ndarray) -> bool:
    # complement of A within a window embedded in a larger graph: every
    # component of window \ A must touch the window edge
    rest = ~A
    if not rest.any():
        return True
    labels, count = label_components(lattice, rest)
    edge = (lattice.neighbor_table < 0).any(axis=1)
    touching = np.unique(labels[edge & rest])
    return len(touching) == count


@dataclass
class GoodVertexReport:
    good: bool
    sets_checked: int
    size_cap: int
    worst_ratio: float
    witness: Optional[tuple[int, ...]] = None


def is_good_vertex(
    lattice: Lattice,
    fld: DisorderField,
    eps: float,
    u: tuple[int, ...],
    radius: int,
    M_range: tuple[float, float],
    size_cap: int = 8,
    simply_connected: bool = True,
) -> GoodVertexReport:
    """Check |H^pm(h) - H^pm(h^A)| <= |d_e A| on the window B(u, 2R) for all
    connected A containing u with |A| <= size_cap, both boundary signs, at
    both ends of the M range."""
    side = 4 * radius + 1
    if side > min(lattice.shape):
        raise ValueError(f"window of side {side} exceeds lattice shape {lattice.shape}")
    d = lattice.dim
    box = Lattice(d, side, wrap=False)
    offsets = box.coords - 2 * radius
    src = np.asarray(u) + offsets
    if lattice.wrap:
        src %= np.array(lattice.shape)
    elif (src < 0).any() or (src >= np.array(lattice.shape)).any():
        raise ValueError("window leaves the open box")
    h = fld.values[np.ravel_multi_index(tuple(src.T), lattice.shape)]
    local = field_from_values(h, box, fld.seed)
    center = box.index((2 * radius,) * d)
    base = {}
    for sign in ("plus", "minus"):
        for M in M_range:
            base[sign, M] = ground_energy(EnergyModel(box, local, eps, M, sign))
    checked = 0
    worst = 0.0
    for A_idx in connected_sets(box, center, size_cap):
        A = np.zeros(box.n, dtype=bool)
        A[list(A_idx)] = True
        if simply_connected and not _complement_connected(box, A):
            continue
        checked += 1
        # boundary edges counted in Z^d: 2d per vertex minus twice the inner edges
        e = box.edges
        inner_edges = np.count_nonzero(A[e[:, 0]] & A[e[:, 1]])
        dA = 2 * d * len(A_idx) - 2 * inner_edges
        flipped = local.flipped(A)
        for (sign, M), H0 in base.items():
            H1 = ground_energy(EnergyModel(box, flipped, eps, M, sign))
            ratio = abs(H1 - H0) / dA
            if ratio > worst:
                worst = ratio
            if abs(H1 - H0) > dA + 1e-9:
                return GoodVertexReport(False, checked, size_cap, worst, A_idx)
    return GoodVertexReport(True, checked, size_cap, worst)
