"""Binary lattice snapshots: a fixed 64-byte header followed by one signed
byte per vertex in row-major order.

Header (little endian): magic ``RFIMLAB1``, version u16, d u8, wrap u8,
kind u8 (0 spin, 1 site), pad u8, N u32, seed u64, M f64, eps f64,
field digest u64, zero padding to 64 bytes.
"""
from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass

import numpy as np

from .bootstrap import OPEN, SiteConfig
from .lattice import Lattice

MAGIC = b"RFIMLAB1"
VERSION = 1
HEADER_SIZE = 64
INITIAL_OPEN_BIT = 0x10
KINDS = ("spin", "site")
_HEADER = struct.Struct("<8sHBBBBIQddQ")


class SnapshotError(ValueError):
    pass


def field_digest(values: np.ndarray) -> int:
    """First 8 bytes of the SHA-256 of the float64 field values."""
    raw = hashlib.sha256(np.ascontiguousarray(values, dtype=np.float64).tobytes()).digest()
    return int.from_bytes(raw[:8], "little")


@dataclass
class Snapshot:
    kind: str
    dim: int
    side: int
    wrap: bool
    payload: np.ndarray
    seed: int = 0
    M: float = 0.0
    eps: float = 0.0
    digest: int = 0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise SnapshotError(f"unknown payload kind {self.kind!r}")
        self.payload = np.asarray(self.payload, dtype=np.int8).ravel()
        if self.payload.shape != (self.side**self.dim,):
            raise SnapshotError(f"payload has {self.payload.size} entries, expected {self.side**self.dim}")

    @property
    def lattice(self) -> Lattice:
        return Lattice(self.dim, self.side, wrap=self.wrap)

    @classmethod
    def of_spins(cls, lattice: Lattice, spins: np.ndarray, **meta) -> "Snapshot":
        spins = np.asarray(spins)
        if not np.isin(spins, (-1, 1)).all():
            raise SnapshotError("spin payload must be +-1")
        return cls("spin", lattice.dim, _cubic_side(lattice), lattice.wrap, spins, **meta)

    @classmethod
    def of_sites(cls, config: SiteConfig, **meta) -> "Snapshot":
        payload = config.state.astype(np.int8) | np.where(config.initial_open, INITIAL_OPEN_BIT, 0).astype(np.int8)
        lat = config.lattice
        return cls("site", lat.dim, _cubic_side(lat), lat.wrap, payload, **meta)

    def spins(self) -> np.ndarray:
        if self.kind != "spin":
            raise SnapshotError("snapshot does not hold spins")
        return self.payload.copy()

    def site_config(self) -> SiteConfig:
        if self.kind != "site":
            raise SnapshotError("snapshot does not hold sites")
        state = self.payload & 0x0F
        initial = (self.payload & INITIAL_OPEN_BIT) != 0
        if not np.isin(state, (0, 1, 2)).all() or (initial & (state != OPEN)).any():
            raise SnapshotError("invalid site payload")
        return SiteConfig(self.lattice, state.astype(np.int8), initial)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Snapshot):
            return NotImplemented
        return to_bytes(self) == to_bytes(other)


def _cubic_side(lattice: Lattice) -> int:
    if lattice.sides is not None:
        raise SnapshotError("snapshots hold cubic lattices only")
    return lattice.side


def to_bytes(snap: Snapshot) -> bytes:
    head = _HEADER.pack(
        MAGIC,
        VERSION,
        snap.dim,
        int(snap.wrap),
        KINDS.index(snap.kind),
        0,
        snap.side,
        snap.seed & ((1 << 64) - 1),
        float(snap.M),
        float(snap.eps),
        snap.digest,
    )
    return head.ljust(HEADER_SIZE, b"\0") + snap.payload.tobytes()


def from_bytes(data: bytes) -> Snapshot:
    if len(data) < HEADER_SIZE:
        raise SnapshotError("truncated header")
    magic, version, d, wrap, kind, _, N, seed, M, eps, digest = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise SnapshotError(f"bad magic {magic!r}")
    if version != VERSION:
        raise SnapshotError(f"snapshot version {version} is not supported (expected {VERSION})")
    if kind >= len(KINDS) or wrap > 1 or d < 1:
        raise SnapshotError("corrupt header")
    n = N**d
    if len(data) != HEADER_SIZE + n:
        raise SnapshotError(f"payload has {len(data) - HEADER_SIZE} bytes, expected {n}")
    payload = np.frombuffer(data, dtype=np.int8, offset=HEADER_SIZE).copy()
    return Snapshot(KINDS[kind], d, N, bool(wrap), payload, seed, M, eps, digest)


def write_snapshot(path: str | os.PathLike, snap: Snapshot) -> None:
    data = to_bytes(snap)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def read_snapshot(path: str | os.PathLike) -> Snapshot:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
