"""Hypercubic boxes and tori: indexing, neighbours, boundaries, clusters.

Vertex sets are plain boolean masks of length ``N**d`` indexed by the
row-major linear index of a vertex.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components


@dataclass(frozen=True)
class Lattice:
    """A d-dimensional box of side N, optionally wrapped into a torus.

    ``sides`` overrides the cubic shape for rectangular boxes; ``side`` is
    then the longest edge.
    """

    dim: int
    side: int
    wrap: bool = True
    sides: Optional[tuple[int, ...]] = None

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError(f"dimension must be >= 1, got {self.dim}")
        if self.sides is not None:
            if len(self.sides) != self.dim:
                raise ValueError(f"sides {self.sides} do not match dimension {self.dim}")
            object.__setattr__(self, "sides", tuple(int(s) for s in self.sides))
            if len(set(self.sides)) == 1:
                object.__setattr__(self, "side", self.sides[0])
                object.__setattr__(self, "sides", None)
        if min(self.shape) < 1:
            raise ValueError(f"side must be >= 1, got {self.shape}")
        if self.wrap and min(self.shape) < 3:
            # N < 3 would turn the torus into a multigraph
            raise ValueError(f"torus side must be >= 3, got {self.shape}")

    @classmethod
    def rect(cls, shape: Sequence[int], wrap: bool = False) -> "Lattice":
        shape = tuple(int(s) for s in shape)
        return cls(len(shape), max(shape), wrap, shape)

    @property
    def shape(self) -> tuple[int, ...]:
        if self.sides is not None:
            return self.sides
        return (self.side,) * self.dim

    @property
    def n(self) -> int:
        return int(np.prod(self.shape))

    @property
    def degree(self) -> int:
        return 2 * self.dim

    def index(self, coord: Sequence[int]) -> int:
        coord = tuple(int(c) for c in coord)
        if len(coord) != self.dim or any(not 0 <= c < n for c, n in zip(coord, self.shape)):
            raise ValueError(f"coordinate {coord} outside lattice {self.shape}")
        return int(np.ravel_multi_index(coord, self.shape))

    def coord(self, idx: int) -> tuple[int, ...]:
        if not 0 <= idx < self.n:
            raise ValueError(f"index {idx} outside lattice of {self.n} vertices")
        return tuple(int(c) for c in np.unravel_index(idx, self.shape))

    @cached_property
    def coords(self) -> np.ndarray:
        """(n, d) array of all vertex coordinates, row-major order."""
        grids = np.indices(self.shape).reshape(self.dim, -1)
        return np.ascontiguousarray(grids.T)

    @cached_property
    def neighbor_table(self) -> np.ndarray:
        """(n, 2d) int64 table; column 2k is the -e_k neighbour, 2k+1 the +e_k
        neighbour; -1 marks a missing neighbour of an open box."""
        idx = np.arange(self.n).reshape(self.shape)
        table = np.empty((self.n, 2 * self.dim), dtype=np.int64)
        for k in range(self.dim):
            for j, shift in enumerate((1, -1)):
                nb = np.roll(idx, shift, axis=k)
                if not self.wrap:
                    nb = nb.copy()
                    edge = [slice(None)] * self.dim
                    edge[k] = 0 if shift == 1 else self.shape[k] - 1
                    nb[tuple(edge)] = -1
                table[:, 2 * k + j] = nb.ravel()
        table.setflags(write=False)
        return table

    @cached_property
    def edges(self) -> np.ndarray:
        """(|E|, 2) array of undirected edges, each listed once."""
        tab = self.neighbor_table
        src = np.repeat(np.arange(self.n), 2 * self.dim)
        dst = tab.ravel()
        keep = (dst >= 0) & (src < dst)
        pairs = np.stack([src[keep], dst[keep]], axis=1)
        pairs.setflags(write=False)
        return pairs

    def neighbors(self, v: Sequence[int]) -> list[tuple[int, ...]]:
        i = self.index(v)
        return [self.coord(int(j)) for j in self.neighbor_table[i] if j >= 0]

    def box(self, center: Sequence[int], radius: int) -> np.ndarray:
        """Mask of B(center, radius) in the sup norm, wrapped on a torus."""
        if radius < 0:
            raise ValueError("radius must be >= 0")
        c = np.asarray(center)
        delta = np.abs(self.coords - c)
        if self.wrap:
            delta = np.minimum(delta, np.array(self.shape) - delta)
        return delta.max(axis=1) <= radius

    def distance(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Sup-norm distance between coordinate arrays (broadcasting)."""
        delta = np.abs(np.asarray(a) - np.asarray(b))
        if self.wrap:
            delta = np.minimum(delta, np.array(self.shape) - delta)
        return delta.max(axis=-1)

    def mask(self, vertices: Iterable[Sequence[int]]) -> np.ndarray:
        out = np.zeros(self.n, dtype=bool)
        for v in vertices:
            out[self.index(v)] = True
        return out


def _check_mask(lattice: Lattice, A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=bool)
    if A.shape != (lattice.n,):
        raise ValueError(f"vertex mask must have shape ({lattice.n},), got {A.shape}")
    return A


def inner_boundary(lattice: Lattice, A: np.ndarray) -> np.ndarray:
    A = _check_mask(lattice, A)
    tab = lattice.neighbor_table
    outside = np.zeros(tab.shape, dtype=bool)
    present = tab >= 0
    outside[present] = ~A[tab[present]]
    return A & outside.any(axis=1)


def outer_boundary(lattice: Lattice, A: np.ndarray) -> np.ndarray:
    return inner_boundary(lattice, ~_check_mask(lattice, A))


def edge_boundary(lattice: Lattice, A: np.ndarray) -> int:
    """Number of edges with exactly one endpoint in A."""
    A = _check_mask(lattice, A)
    if not A.any() or A.all():
        raise ValueError("edge boundary needs a nonempty proper subset")
    e = lattice.edges
    return int(np.count_nonzero(A[e[:, 0]] != A[e[:, 1]]))


def label_components(lattice: Lattice, A: np.ndarray) -> tuple[np.ndarray, int]:
    """Connected components of the subgraph induced by A.

    Returns (labels, count) with labels in 1..count on A and 0 elsewhere.
    Components are numbered by their smallest linear index.
    """
    A = _check_mask(lattice, A)
    grid = A.reshape(lattice.shape)
    structure = ndimage.generate_binary_structure(lattice.dim, 1)
    labels, count = ndimage.label(grid, structure=structure)
    if lattice.wrap and count > 1:
        rows, cols = [], []
        for k in range(lattice.dim):
            lo = np.take(labels, 0, axis=k).ravel()
            hi = np.take(labels, lattice.shape[k] - 1, axis=k).ravel()
            both = (lo > 0) & (hi > 0)
            rows.append(lo[both] - 1)
            cols.append(hi[both] - 1)
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        graph = coo_matrix((np.ones(len(r)), (r, c)), shape=(count, count))
        count, merged = connected_components(graph, directed=False)
        flat = labels.ravel()
        out = np.zeros_like(flat)
        out[flat > 0] = merged[flat[flat > 0] - 1] + 1
        labels = out.reshape(lattice.shape)
    flat = labels.ravel().astype(np.int64)
    return _renumber(flat, count), count


def _renumber(labels: np.ndarray, count: int) -> np.ndarray:
    # canonical order: by first linear index of each component
    if count == 0:
        return labels
    nz = np.flatnonzero(labels)
    _, first = np.unique(labels[nz], return_index=True)
    order = np.argsort(nz[first])
    remap = np.zeros(labels.max() + 1, dtype=np.int64)
    remap[np.unique(labels[nz])[order]] = np.arange(1, count + 1)
    return remap[labels]


def is_connected(lattice: Lattice, A: np.ndarray) -> bool:
    A = _check_mask(lattice, A)
    if not A.any():
        return False
    return label_components(lattice, A)[1] == 1


def axis_extents(lattice: Lattice, A: np.ndarray) -> np.ndarray:
    """Per-axis sup-norm extent of A (wrap-aware on a torus)."""
    A = _check_mask(lattice, A)
    pts = lattice.coords[A]
    ext = np.zeros(lattice.dim, dtype=np.int64)
    for k in range(lattice.dim):
        vals = np.unique(pts[:, k])
        if not lattice.wrap:
            ext[k] = vals[-1] - vals[0]
            continue
        side = lattice.shape[k]
        # farthest circular partner of each value sits next to x + N/2
        target = (vals + side // 2) % side
        pos = np.searchsorted(vals, target)
        best = 0
        for off in (-1, 0):
            cand = vals[(pos + off) % len(vals)]
            d = np.abs(cand - vals)
            best = max(best, int(np.minimum(d, side - d).max()))
        ext[k] = best
    return ext


def set_diameter(lattice: Lattice, A: np.ndarray) -> int:
    """Sup-norm diameter of a nonempty set (no connectivity requirement)."""
    A = _check_mask(lattice, A)
    if not A.any():
        raise ValueError("diameter of an empty set")
    return int(axis_extents(lattice, A).max())


def cluster_diameter(lattice: Lattice, A: np.ndarray) -> int:
    """Sup-norm diameter of a connected, nonempty vertex set."""
    A = _check_mask(lattice, A)
    if not A.any():
        raise ValueError("cluster is empty")
    if not is_connected(lattice, A):
        raise ValueError("cluster is not connected")
    return set_diameter(lattice, A)
