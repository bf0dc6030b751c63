"""Reproducible Gaussian disorder and the open/closed tail probabilities.

Every random number in the package comes from a keyed counter-mode hash of
``(seed, stream, linear index)``, so a value never depends on evaluation
order or on which other sites were generated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .lattice import Lattice

_MASK64 = (1 << 64) - 1

# stream tags keep the disorder field and auxiliary uniforms independent
STREAM_FIELD = 0
STREAM_SITES = 1


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def parse_seed(text: str | int) -> int:
    """Accept decimal or 0x-prefixed hex seeds; reduce to 64 bits."""
    if isinstance(text, (int, np.integer)):
        value = int(text)
    else:
        value = int(text.strip(), 0)
    if value < 0:
        raise ValueError(f"seed must be nonnegative, got {value}")
    return value & _MASK64


def hashed_uniforms(seed: int, index: np.ndarray, stream: int = STREAM_FIELD) -> np.ndarray:
    """Uniforms in (0, 1), one per index, as a pure function of the key."""
    index = np.asarray(index, dtype=np.uint64)
    with np.errstate(over="ignore"):
        key = _splitmix64(np.uint64(parse_seed(seed)) ^ _splitmix64(np.uint64(stream)))
        bits = _splitmix64(_splitmix64(index ^ key) + key)
    # 53 random bits, centred in their cell so 0 and 1 never occur
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


@dataclass(frozen=True)
class DisorderField:
    seed: int
    lattice: Lattice
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values.setflags(write=False)

    def flipped(self, A: np.ndarray) -> "DisorderField":
        """The field with the sign reversed on the vertex mask A."""
        A = np.asarray(A, dtype=bool)
        vals = np.where(A, -self.values, self.values)
        return DisorderField(self.seed, self.lattice, vals)

    def digest(self) -> str:
        import hashlib

        return hashlib.sha256(self.values.tobytes()).hexdigest()[:16]


def sample_field(seed: int | str, lattice: Lattice) -> DisorderField:
    seed = parse_seed(seed)
    u = hashed_uniforms(seed, np.arange(lattice.n), STREAM_FIELD)
    with np.errstate(over="ignore"):
        h = special.ndtri(u)
    return DisorderField(seed, lattice, h)


def field_from_values(values: np.ndarray, lattice: Lattice, seed: int = 0) -> DisorderField:
    values = np.array(values, dtype=np.float64).ravel()
    if values.shape != (lattice.n,):
        raise ValueError(f"expected {lattice.n} field values, got {values.shape}")
    return DisorderField(seed, lattice, values)


@dataclass(frozen=True)
class ThresholdParams:
    M: float
    eps: float
    p: float
    q: float
    degenerate: bool = False


def open_closed_probs(M: float, eps: float) -> ThresholdParams:
    """p = P[eps*h + M - 2 >= 0] and q = P[eps*h + M < 0] for standard normal h."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    if eps == 0:
        p = 1.0 if M - 2 >= 0 else 0.0
        q = 1.0 if M < 0 else 0.0
        return ThresholdParams(M, eps, p, q, degenerate=True)
    p = float(special.ndtr(-(2.0 - M) / eps))
    q = float(special.ndtr(-M / eps))
    return ThresholdParams(M, eps, p, q)


def critical_time(d: int) -> float:
    """c_d = 2 sqrt(d) / (1 + sqrt(d)), the positive root of x^2 = d (2 - x)^2."""
    if d < 2:
        raise ValueError(f"dimension must be >= 2, got {d}")
    r = math.sqrt(d)
    return 2.0 * r / (1.0 + r)
