"""Qm.n fixed-point semantics.

A Qm.n value stores an integer v and denotes the real number v * 2**-n.
The sign bit is counted as part of the integer portion, so a format of
total width w has m = w - n - 1 magnitude bits. Rounding is always
floor (truncation toward minus infinity), which is what an arithmetic
right shift computes; the generated C code relies on that equivalence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MIN_WIDTH = 2
MAX_WIDTH = 16


def int_bounds(w: int) -> tuple[int, int]:
    """Inclusive integer range of a signed w-bit value."""
    return -(1 << (w - 1)), (1 << (w - 1)) - 1


def q_range(w: int, n: int) -> tuple[float, float]:
    """Real-valued range representable by a w-bit Qm.n format."""
    lo, hi = int_bounds(w)
    return math.ldexp(lo, -n), math.ldexp(hi, -n)


def q_resolution(n: int) -> float:
    """Step between adjacent representable values: 2**-n."""
    return math.ldexp(1.0, -n)


@dataclass(frozen=True)
class QFormat:
    """Fixed-point format descriptor: total width w, fractional bits n.

    n may be negative (trailing integer zeros) or >= w (leading
    fractional zeros); both arise from range-driven format selection.
    """

    w: int
    n: int

    def __post_init__(self):
        if not MIN_WIDTH <= self.w <= MAX_WIDTH:
            raise ValueError(f"width must be in [{MIN_WIDTH}, {MAX_WIDTH}], got {self.w}")

    @property
    def m(self) -> int:
        return self.w - self.n - 1

    @property
    def int_min(self) -> int:
        return int_bounds(self.w)[0]

    @property
    def int_max(self) -> int:
        return int_bounds(self.w)[1]

    def range(self) -> tuple[float, float]:
        return q_range(self.w, self.n)

    def resolution(self) -> float:
        return q_resolution(self.n)


def saturate(v: int, w: int) -> int:
    lo, hi = int_bounds(w)
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


def quantize_value(x: float, fmt: QFormat) -> int:
    """floor(x * 2**n), saturated to the format's integer range.

    ldexp scales by an exact power of two, so the floor sees the exact
    product and the result matches integer-only arithmetic bit for bit.
    """
    if not math.isfinite(x):
        raise ValueError(f"cannot quantize non-finite value {x!r}")
    return saturate(math.floor(math.ldexp(x, fmt.n)), fmt.w)


def dequantize(v: int, fmt: QFormat) -> float:
    return math.ldexp(v, -fmt.n)


def requantize(v: int, from_n: int, to_n: int, w: int) -> int:
    """Move a double-width value from scale 2**-from_n to 2**-to_n and saturate to w bits.

    A positive shift is an arithmetic right shift (floor); a negative
    shift multiplies by a power of two.
    """
    shift = from_n - to_n
    if shift >= 0:
        scaled = v >> shift
    else:
        scaled = v << -shift
    return saturate(scaled, w)


def container_dtype(w: int) -> np.dtype:
    """Smallest standard integer container holding w-bit values."""
    return np.dtype(np.int8) if w <= 8 else np.dtype(np.int16)


def accumulator_dtype(w: int) -> np.dtype:
    """Container of the double-width accumulator (and of stored biases)."""
    return np.dtype(np.int16) if w <= 8 else np.dtype(np.int32)


def wrap_to_bits(v, bits: int):
    """Two's-complement wraparound of ints or int arrays to `bits` bits.

    Mirrors what a C accumulator of that width does on overflow, which
    the fixed-point interpreter reproduces exactly. Array inputs must fit
    int64 before wrapping (always true for our accumulation sums).
    """
    span = 1 << bits
    half = 1 << (bits - 1)
    if isinstance(v, np.ndarray):
        return ((v.astype(np.int64) + half) & (span - 1)) - half
    return ((int(v) + half) & (span - 1)) - half


def quantize_array(values: np.ndarray, n: int, w: int) -> np.ndarray:
    """Vectorised quantize_value over an array, returned in the w-bit container."""
    scaled = np.floor(np.ldexp(values.astype(np.float64), n))
    lo, hi = int_bounds(w)
    return np.clip(scaled, lo, hi).astype(container_dtype(w))


def quantize_wide_array(values: np.ndarray, n: int, w: int) -> np.ndarray:
    """Quantize into the double-width container (used for biases)."""
    scaled = np.floor(np.ldexp(values.astype(np.float64), n))
    lo, hi = int_bounds(2 * w)
    return np.clip(scaled, lo, hi).astype(accumulator_dtype(w))


def dequantize_array(data: np.ndarray, n: int) -> np.ndarray:
    return np.ldexp(data.astype(np.float64), -n)


@dataclass(frozen=True)
class FixedTensor:
    """Integer tensor together with the QFormat its values are expressed in."""

    data: np.ndarray
    fmt: QFormat

    def __post_init__(self):
        expected = container_dtype(self.fmt.w)
        if self.data.dtype != expected:
            raise ValueError(f"data dtype {self.data.dtype} does not match container {expected}")
        lo, hi = int_bounds(self.fmt.w)
        if self.data.size and (self.data.min() < lo or self.data.max() > hi):
            raise ValueError(f"values outside signed {self.fmt.w}-bit range")

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def to_float(self) -> np.ndarray:
        return dequantize_array(self.data, self.fmt.n)
