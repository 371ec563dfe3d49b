"""Arithmetic on the ring Z/2^64 and fixed-point encoding of reals.

Ring elements are stored as ``numpy.uint64``; every operation wraps modulo
2^64.  Values at or above 2^63 are read as negatives (two's complement).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, RangeError

RING_BITS = 64
RING_DTYPE = np.uint64
MASK64 = (1 << 64) - 1

# |x| of a product-scale value entering ``truncate`` must stay below 2^TRUNC_BOUND_BITS.
TRUNC_BOUND_BITS = 48
# Truncation masks are drawn uniformly from [0, 2^TRUNC_MASK_BITS).
TRUNC_MASK_BITS = 63


@dataclass(frozen=True)
class FixedConfig:
    frac_bits: int = 16

    def __post_init__(self):
        if not 1 <= int(self.frac_bits) <= 31:
            raise ConfigError(f"frac_bits must lie in [1, 31], got {self.frac_bits}")

    @property
    def scale(self) -> int:
        return 1 << self.frac_bits

    @property
    def ulp(self) -> float:
        return 1.0 / self.scale


DEFAULT_FIXED = FixedConfig()


def as_ring(x) -> np.ndarray:
    """Coerce ints (possibly negative or >= 2^63) to a uint64 array, reducing mod 2^64."""
    if isinstance(x, np.ndarray):
        if x.dtype == RING_DTYPE:
            return x
        if x.dtype == np.int64:
            return x.view(RING_DTYPE)
        if np.issubdtype(x.dtype, np.integer):
            return x.astype(np.int64).view(RING_DTYPE)
    if isinstance(x, (int, np.integer)):
        return np.asarray(int(x) & MASK64, dtype=RING_DTYPE)
    if isinstance(x, (list, tuple)):
        obj = np.array(x, dtype=object)
        if all(isinstance(v, (int, np.integer)) for v in obj.reshape(-1).tolist()):
            x = obj
    arr = np.asarray(x)
    if arr.dtype == object or (arr.size and np.issubdtype(arr.dtype, np.integer)):
        flat = [int(v) & MASK64 for v in arr.reshape(-1).tolist()]
        return np.array(flat, dtype=RING_DTYPE).reshape(arr.shape)
    return arr.astype(RING_DTYPE)


def to_signed(r) -> np.ndarray:
    return as_ring(r).view(np.int64)


def from_signed(x) -> np.ndarray:
    return np.asarray(x, dtype=np.int64).view(RING_DTYPE)


def ring_add(a, b) -> np.ndarray:
    with np.errstate(over="ignore"):
        return np.add(as_ring(a), as_ring(b), dtype=RING_DTYPE)


def ring_sub(a, b) -> np.ndarray:
    with np.errstate(over="ignore"):
        return np.subtract(as_ring(a), as_ring(b), dtype=RING_DTYPE)


def ring_mul(a, b) -> np.ndarray:
    with np.errstate(over="ignore"):
        return np.multiply(as_ring(a), as_ring(b), dtype=RING_DTYPE)


def ring_neg(a) -> np.ndarray:
    with np.errstate(over="ignore"):
        return np.negative(as_ring(a))


def ring_matmul(a, b) -> np.ndarray:
    """Matrix product over Z/2^64 (numpy integer matmul wraps)."""
    return np.matmul(as_ring(a), as_ring(b))


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def encode_fixed(x, cfg: FixedConfig = DEFAULT_FIXED) -> np.ndarray:
    """round(x * 2^f) mod 2^64, rounding half away from zero."""
    x = np.asarray(x, dtype=np.float64)
    limit = 2.0 ** (63 - cfg.frac_bits)
    if not np.all(np.isfinite(x)) or np.any(np.abs(x) >= limit):
        raise RangeError(f"value out of fixed-point range |x| < 2^{63 - cfg.frac_bits}")
    scaled = _round_half_away(x * cfg.scale)
    if np.any(np.abs(scaled) >= 2.0**63):
        raise RangeError("value rounds outside the signed 64-bit range")
    return scaled.astype(np.int64).view(RING_DTYPE)


def decode_fixed(r, cfg: FixedConfig = DEFAULT_FIXED) -> np.ndarray:
    return to_signed(r).astype(np.float64) / cfg.scale


def shift_right_signed(r, bits: int) -> np.ndarray:
    """Arithmetic (flooring) right shift of the signed reading of ``r``."""
    return (to_signed(r) >> bits).view(RING_DTYPE)


def truncate(r, cfg: FixedConfig, mask, mask_hi) -> np.ndarray:
    """Rescale a product-scale value by 2^-f using a mask pair (mask, mask >> f).

    This is the opened-value arithmetic of masked truncation: the value is shifted
    into [0, 2^(B+1)), masked, shifted, and unmasked.  The result is
    floor(r / 2^f) or one more.  Valid while |signed(r)| < 2^TRUNC_BOUND_BITS;
    outside that bound the result is unspecified.
    """
    f = cfg.frac_bits
    offset = np.uint64(1 << TRUNC_BOUND_BITS)
    opened = ring_add(ring_add(r, offset), mask)
    return ring_sub(ring_sub(opened >> np.uint64(f), mask_hi), np.uint64(1 << (TRUNC_BOUND_BITS - f)))


@dataclass
class FixedVec:
    """Fixed-point encoded tensor: ring elements plus their encoding config."""

    elems: np.ndarray
    cfg: FixedConfig = DEFAULT_FIXED

    def __post_init__(self):
        self.elems = as_ring(self.elems)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.elems.shape

    @classmethod
    def from_real(cls, x, cfg: FixedConfig = DEFAULT_FIXED) -> "FixedVec":
        return cls(encode_fixed(x, cfg), cfg)

    def decode(self) -> np.ndarray:
        return decode_fixed(self.elems, self.cfg)

    def __eq__(self, other):
        if not isinstance(other, FixedVec):
            return NotImplemented
        return self.cfg == other.cfg and self.shape == other.shape and bool(np.all(self.elems == other.elems))
