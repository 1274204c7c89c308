"""Uniform quantization with a nested power-of-two scale scheme.

All grids are unsigned: a real x maps to q = clip(round((x - m) / step), 0, 2^b - 1)
with m the range minimum. Signedness lives entirely in m. A master bit-width n
defines the storage precision; every lower precision b shares the same m and uses
step_b = step_n * 2^(n - b), so dropping from n to b bits is a rounded right shift.

Rounding is half-away-from-zero everywhere, realized in the integer domain by
pre-adding half the divisor before shifting.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

MIN_BITWIDTH = 2
MAX_BITWIDTH = 16


class DegenerateRangeError(ValueError):
    """Raised when a quantization range has zero or negative width."""


def round_half_away(x):
    """Round to nearest integer, halves away from zero. Works on floats and arrays."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def round_half_away_int(x: int | Fraction) -> int:
    """Exact half-away-from-zero rounding of a rational to an int."""
    f = Fraction(x)
    if f < 0:
        return -round_half_away_int(-f)
    # floor(f + 1/2) for non-negative f
    return (f.numerator * 2 + f.denominator) // (2 * f.denominator)


def rounding_right_shift(v: int, s: int) -> int:
    """Divide integer v by 2^s rounding half away from zero."""
    if s == 0:
        return int(v)
    v = int(v)
    if v >= 0:
        return (v + (1 << (s - 1))) >> s
    return -((-v + (1 << (s - 1))) >> s)


@dataclass(frozen=True)
class QuantParams:
    """Affine grid for one tensor role: step size, range minimum, bit-width.

    ``bitwidth`` is the precision this grid addresses; ``master_bitwidth`` is the
    precision it was derived from (equal for a master grid).
    """

    scale: float
    offset: float
    bitwidth: int
    master_bitwidth: int

    def __post_init__(self):
        if not self.scale > 0:
            raise DegenerateRangeError(f"scale must be positive, got {self.scale}")
        if not (MIN_BITWIDTH <= self.bitwidth <= self.master_bitwidth <= MAX_BITWIDTH):
            raise ValueError(
                f"need {MIN_BITWIDTH} <= b={self.bitwidth} <= n={self.master_bitwidth} <= {MAX_BITWIDTH}"
            )

    @property
    def qmax(self) -> int:
        return (1 << self.bitwidth) - 1

    @property
    def is_master(self) -> bool:
        return self.bitwidth == self.master_bitwidth


@dataclass(frozen=True)
class NestedTensor:
    """Integer tensor stored at the master bit-width of its params.

    Lower-precision views are produced with :func:`shift_down`; they are never
    stored back into a NestedTensor.
    """

    data: np.ndarray
    params: QuantParams

    def __post_init__(self):
        if not np.issubdtype(self.data.dtype, np.integer):
            raise TypeError(f"NestedTensor data must be integer, got {self.data.dtype}")
        if not self.params.is_master:
            raise ValueError("NestedTensor params must be at master bit-width")
        if self.data.size and (self.data.min() < 0 or self.data.max() > self.params.qmax):
            raise ValueError("NestedTensor elements out of [0, 2^n - 1]")

    @property
    def shape(self):
        return self.data.shape


def make_master_params(range_min: float, range_max: float, n: int) -> QuantParams:
    """Master grid over [range_min, range_max] at bit-width n."""
    if not range_max > range_min:
        raise DegenerateRangeError(f"range [{range_min}, {range_max}] has no width")
    if not (MIN_BITWIDTH <= n <= MAX_BITWIDTH):
        raise ValueError(f"master bit-width {n} outside [{MIN_BITWIDTH}, {MAX_BITWIDTH}]")
    scale = (range_max - range_min) / ((1 << n) - 1)
    return QuantParams(scale=scale, offset=range_min, bitwidth=n, master_bitwidth=n)


def derive_params(master: QuantParams, b: int) -> QuantParams:
    """Grid at bit-width b nested inside a master grid: step doubles per dropped bit.

    The offset is shared with the master; multiplying by an exact power of two
    keeps the derived step exactly representable.
    """
    if not master.is_master:
        raise ValueError("derive_params needs a master-grid argument")
    if b > master.master_bitwidth:
        raise ValueError(f"cannot derive b={b} from n={master.master_bitwidth}")
    if b == master.master_bitwidth:
        return master
    return QuantParams(
        scale=master.scale * float(1 << (master.master_bitwidth - b)),
        offset=master.offset,
        bitwidth=b,
        master_bitwidth=master.master_bitwidth,
    )


def quantize(x, params: QuantParams) -> np.ndarray:
    """Map real values onto the integer grid; out-of-range inputs clip."""
    x = np.asarray(x, dtype=np.float64)
    q = round_half_away((x - params.offset) / params.scale)
    return np.clip(q, 0, params.qmax).astype(np.int64)


def dequantize(q, params: QuantParams) -> np.ndarray:
    """Reconstruct real values from grid indices."""
    q = np.asarray(q)
    if q.size and (q.min() < 0 or q.max() > params.qmax):
        raise ValueError(f"quantized values outside [0, {params.qmax}]")
    return q.astype(np.float64) * params.scale + params.offset


def shift_down(q_n, n: int, b: int) -> np.ndarray:
    """Reduce master-width integers to b bits with one rounded right shift.

    Equivalent to clip(round(q / 2^(n-b)), 0, 2^b - 1); the rounding is realized
    by adding half the divisor before the shift.
    """
    if b > n:
        raise ValueError(f"cannot shift up: b={b} > n={n}")
    q_n = np.asarray(q_n)
    if q_n.size and (q_n.min() < 0 or q_n.max() > (1 << n) - 1):
        raise ValueError(f"elements outside [0, 2^{n} - 1]")
    if b == n:
        return q_n.astype(np.int64)
    s = n - b
    q_b = (q_n.astype(np.int64) + (1 << (s - 1))) >> s
    return np.clip(q_b, 0, (1 << b) - 1)


def dequant_requant_reference(q, from_params: QuantParams, to_params: QuantParams,
                              counters=None) -> np.ndarray:
    """Change grids the conventional way: float round-trip per element.

    This is the baseline the shift transition replaces; it exists as an oracle
    and as the cost reference. If ``counters`` (an OpCounters) is given, it is
    charged the per-element primitive sequence of the float pipeline: two
    int/float conversions plus five float ops (mul, div, add, sub, round).
    """
    q = np.asarray(q)
    x = dequantize(q, from_params)
    out = quantize(x, to_params)
    if counters is not None:
        counters.conversions += 2 * q.size
        counters.fp_ops += 5 * q.size
    return out
