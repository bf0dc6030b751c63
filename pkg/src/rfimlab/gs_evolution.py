"""Ground-state evolution in M: breakpoints, flip times and the largest avalanche.

The sweep bisects M recursively.  Monotonicity of the maximal minimiser in M
means that on an interval [a, b] only the vertices that are minus at a and
plus at b can change; everything else is frozen and enters the subproblem as
a boundary field.  The free set splits into connected components that are
bisected independently.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .disorder import sample_field
from .groundstate import SCALE, EnergyModel, ground_state, solve_plus_set
from .lattice import Lattice, label_components

# a bracket narrower than this many quantisation steps cannot be resolved
MIN_TOL = 64.0 / SCALE


@dataclass
class Breakpoint:
    M_lo: float
    M_hi: float
    flip_set: np.ndarray
    components: list[np.ndarray] = field(default_factory=list)

    @property
    def size(self) -> int:
        return int(np.count_nonzero(self.flip_set))

    @property
    def merged(self) -> bool:
        """More than one connected piece flipped inside the same bracket."""
        return len(self.components) > 1

    @property
    def M_mid(self) -> float:
        return 0.5 * (self.M_lo + self.M_hi)


@dataclass
class EvolutionSummary:
    breakpoints: list[Breakpoint]
    flip_lo: np.ndarray
    flip_hi: np.ndarray
    solves: int
    tol: float

    @property
    def flip_time(self) -> np.ndarray:
        return 0.5 * (self.flip_lo + self.flip_hi)

    @property
    def M_G(self) -> int:
        return max((b.size for b in self.breakpoints), default=0)

    @property
    def largest(self) -> Optional[Breakpoint]:
        if not self.breakpoints:
            return None
        # first of the largest, in M order
        sizes = [b.size for b in self.breakpoints]
        return self.breakpoints[int(np.argmax(sizes))]

    @property
    def M_star(self) -> Optional[float]:
        big = self.largest
        return None if big is None else big.M_mid

    def state_at(self, M: float) -> np.ndarray:
        """Ground state implied by the sweep, valid away from the brackets."""
        return np.where(self.flip_hi <= M, 1, -1).astype(np.int8)


def flip_window(model: EnergyModel) -> tuple[np.ndarray, np.ndarray]:
    """Per-vertex interval [-2d - eps h, 2d - eps h] containing its flip time."""
    deg = 2 * model.lattice.dim
    eh = model.eps * model.field.values
    return -deg - eh, deg - eh


def _check_tol(tol: float) -> None:
    if not tol > 0:
        raise ValueError("tol must be positive")
    if tol < MIN_TOL:
        raise ValueError(f"tol {tol:g} is below the capacity-scale resolution {MIN_TOL:g}")


class _Solver:
    """Ground states of subsets with the rest of the lattice frozen."""

    def __init__(self, model: EnergyModel):
        self.model = model
        self.lattice = model.lattice
        self.tab = model.lattice.neighbor_table
        self.eh = model.eps * model.field.values
        self.bfield = model.boundary_field
        self.solves = 0

    def plus_set(self, verts: np.ndarray, M: float, frozen: np.ndarray) -> np.ndarray:
        """Maximal ground state on ``verts`` at M; ``frozen`` holds +-1 for
        every vertex outside ``verts`` that neighbours it."""
        self.solves += 1
        n = len(verts)
        local = np.full(self.lattice.n, -1, dtype=np.int64)
        local[verts] = np.arange(n)
        nb = self.tab[verts]
        present = nb >= 0
        nb_local = np.where(present, local[np.where(present, nb, 0)], -1)
        inside = nb_local >= 0
        outside = present & ~inside
        ext = np.where(outside, frozen[np.where(present, nb, 0)], 0).sum(axis=1)
        F = np.rint((M + self.eh[verts]) * SCALE).astype(np.int64)
        F += (ext + self.bfield[verts]) * SCALE
        rows = np.repeat(np.arange(n), nb.shape[1])
        cols = nb_local.ravel()
        keep = (cols >= 0) & (rows < cols)
        edges = np.stack([rows[keep], cols[keep]], axis=1)
        return solve_plus_set(n, edges, F)


def sweep(model: EnergyModel, tol: float = 1e-7) -> EvolutionSummary:
    """Locate every ground-state breakpoint to within ``tol``."""
    _check_tol(tol)
    lat = model.lattice
    lo_w, hi_w = flip_window(model)
    a0 = float(lo_w.min()) - tol
    b0 = float(hi_w.max())
    solver = _Solver(model)
    everything = np.arange(lat.n)
    minus_all = np.full(lat.n, -1, dtype=np.int64)
    if solver.plus_set(everything, a0, minus_all).any():
        raise RuntimeError("ground state is not all-minus below the flip window")
    if not solver.plus_set(everything, b0, minus_all).all():
        raise RuntimeError("ground state is not all-plus above the flip window")

    # known_lo[v]: largest M where v is known minus; known_hi[v]: smallest M where plus
    known_lo = np.full(lat.n, a0)
    known_hi = np.full(lat.n, b0)
    brackets: dict[tuple[float, float], list[np.ndarray]] = {}
    stack = [(everything, a0, b0)]
    while stack:
        verts, a, b = stack.pop()
        sub = np.zeros(lat.n, dtype=bool)
        sub[verts] = True
        labels, count = label_components(lat, sub)
        for lab in range(1, count + 1):
            comp = np.flatnonzero(labels == lab)
            if b - a <= tol:
                brackets.setdefault((a, b), []).append(comp)
                continue
            m = 0.5 * (a + b)
            frozen = _frozen_spins(known_lo, known_hi, a, b)
            plus = solver.plus_set(comp, m, frozen)
            known_hi[comp[plus]] = np.minimum(known_hi[comp[plus]], m)
            known_lo[comp[~plus]] = np.maximum(known_lo[comp[~plus]], m)
            if plus.any():
                stack.append((comp[plus], a, m))
            if (~plus).any():
                stack.append((comp[~plus], m, b))

    breakpoints = []
    for (a, b), comps in sorted(brackets.items()):
        mask = np.zeros(lat.n, dtype=bool)
        for c in comps:
            mask[c] = True
        comps = sorted(comps, key=lambda c: int(c.min()))
        breakpoints.append(Breakpoint(a, b, mask, comps))
    return EvolutionSummary(breakpoints, known_lo, known_hi, solver.solves, tol)


def _frozen_spins(known_lo, known_hi, a, b) -> np.ndarray:
    frozen = np.zeros(len(known_lo), dtype=np.int64)
    frozen[known_hi <= a] = 1
    frozen[known_lo >= b] = -1
    return frozen


def flip_time(model: EnergyModel, v: Sequence[int] | int, tol: float = 1e-7) -> float:
    """Bisection for the M at which vertex v turns plus (midpoint of a bracket
    of width <= tol)."""
    _check_tol(tol)
    lat = model.lattice
    idx = v if isinstance(v, (int, np.integer)) else lat.index(v)
    lo_w, hi_w = flip_window(model)
    a = float(lo_w[idx]) - tol
    b = float(hi_w[idx])
    while b - a > tol:
        m = 0.5 * (a + b)
        if ground_state(model.at(m))[idx] == 1:
            b = m
        else:
            a = m
    return 0.5 * (a + b)


CSV_COLUMNS = ["N", "trial", "seed", "M_G", "M_star", "M_G_frac", "M_G_over_logN", "config_hash"]


def avalanche_scaling_experiment(
    d: int,
    eps: float,
    sizes: Sequence[int],
    trials: int,
    tol: float = 1e-7,
    seed0: int = 0,
    config_hash: str = "",
) -> list[dict]:
    """Largest avalanche per (N, trial) on tori; seeds are seed0 + trial."""
    rows = []
    for N in sizes:
        lat = Lattice(d, N, wrap=True)
        for trial in range(trials):
            seed = seed0 + trial
            fld = sample_field(seed, lat)
            summary = sweep(EnergyModel(lat, fld, eps), tol)
            mg = summary.M_G
            rows.append(
                {
                    "N": N,
                    "trial": trial,
                    "seed": seed,
                    "M_G": mg,
                    "M_star": summary.M_star,
                    "M_G_frac": mg / lat.n,
                    "M_G_over_logN": mg / math.log(N),
                    "config_hash": config_hash,
                }
            )
    return rows


def rows_to_csv(rows: list[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(row[k]) for k in columns})
    return buf.getvalue()


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return x
