"""Integer-only add, multiply, and dot-product operators.

Each operator replaces a float computation on dequantized values with a linear
combination of the integer inputs weighted by precomputed constants k_i. The
constants are exact scale/offset ratios rounded to F fractional bits; F=0 gives
literal rounded-integer constants, the default F=16 keeps small ratios from
collapsing to zero. A final rounded right shift by F lands the result on the
output grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .quantize import QuantParams, round_half_away_int, rounding_right_shift

DEFAULT_FRAC_BITS = 16


class AccumulatorOverflowError(OverflowError):
    """Dot-product accumulator would exceed the policy's working width."""


@dataclass
class OpCounters:
    """Primitive-operation tallies for one call or one inference."""

    mults: int = 0
    adds: int = 0
    shifts: int = 0
    fp_ops: int = 0
    conversions: int = 0

    def merge(self, other: "OpCounters") -> None:
        self.mults += other.mults
        self.adds += other.adds
        self.shifts += other.shifts
        self.fp_ops += other.fp_ops
        self.conversions += other.conversions

    def total(self) -> int:
        return self.mults + self.adds + self.shifts + self.fp_ops + self.conversions


@dataclass(frozen=True)
class IntOpConstants:
    """Fixed-point multipliers for one operator instance.

    ``k`` holds the rounded signed integers, ``exact`` the exact rational ratios
    they approximate (kept for error analysis), ``frac_bits`` the fixed-point
    precision F. ``degenerate`` flags any nonzero exact ratio that rounded to
    zero, which annihilates that term's contribution entirely.
    """

    role: str  # add | mul | dot
    k: tuple[int, ...]
    exact: tuple[Fraction, ...]
    frac_bits: int
    degenerate: bool = False
    length: int | None = None  # dot only: the N baked into k4

    def deltas(self) -> tuple[Fraction, ...]:
        """Per-constant rounding errors: exact ratio minus k / 2^F."""
        two_f = Fraction(1 << self.frac_bits)
        return tuple(r - Fraction(ki) / two_f for ki, r in zip(self.k, self.exact))


def _encode(ratios: list[Fraction], frac_bits: int, role: str,
            length: int | None = None) -> IntOpConstants:
    two_f = 1 << frac_bits
    k = tuple(round_half_away_int(r * two_f) for r in ratios)
    degenerate = any(r != 0 and ki == 0 for r, ki in zip(ratios, k))
    return IntOpConstants(role=role, k=k, exact=tuple(ratios),
                          frac_bits=frac_bits, degenerate=degenerate, length=length)


def _frac(x: float) -> Fraction:
    return Fraction(x)  # exact binary expansion of the float


def add_constants(p1: QuantParams, p2: QuantParams, py: QuantParams,
                  frac_bits: int = DEFAULT_FRAC_BITS) -> IntOpConstants:
    """Constants for q1 (+) q2 = k1*q1 + k2*q2 + k3 on the output grid."""
    d1, d2, dy = _frac(p1.scale), _frac(p2.scale), _frac(py.scale)
    m1, m2, my = _frac(p1.offset), _frac(p2.offset), _frac(py.offset)
    return _encode([d1 / dy, d2 / dy, (m1 + m2 - my) / dy], frac_bits, "add")


def mul_constants(p1: QuantParams, p2: QuantParams, py: QuantParams,
                  frac_bits: int = DEFAULT_FRAC_BITS) -> IntOpConstants:
    """Constants for q1 (*) q2 = k1*q1*q2 + k2*q1 + k3*q2 + k4."""
    d1, d2, dy = _frac(p1.scale), _frac(p2.scale), _frac(py.scale)
    m1, m2, my = _frac(p1.offset), _frac(p2.offset), _frac(py.offset)
    return _encode(
        [d1 * d2 / dy, d1 * m2 / dy, d2 * m1 / dy, (m1 * m2 - my) / dy],
        frac_bits, "mul",
    )


def dot_constants(px: QuantParams, pw: QuantParams, py: QuantParams, length: int,
                  frac_bits: int = DEFAULT_FRAC_BITS) -> IntOpConstants:
    """Constants for the length-N integer dot product; k4 absorbs N*m_x*m_w."""
    dx, dw, dy = _frac(px.scale), _frac(pw.scale), _frac(py.scale)
    mx, mw, my = _frac(px.offset), _frac(pw.offset), _frac(py.offset)
    return _encode(
        [dx * dw / dy, dx * mw / dy, dw * mx / dy, (length * mx * mw - my) / dy],
        frac_bits, "dot", length=length,
    )


def _clip_out(v: int, py: QuantParams) -> int:
    return min(max(v, 0), py.qmax)


def add_raw(q1: int, q2: int, c: IntOpConstants) -> int:
    """Pre-shift, pre-clip integer combination; exposed for error analysis."""
    return c.k[0] * int(q1) + c.k[1] * int(q2) + c.k[2]


def int_add(q1: int, q2: int, c: IntOpConstants, py: QuantParams) -> int:
    if c.role != "add":
        raise ValueError(f"constants have role {c.role!r}, need 'add'")
    return _clip_out(rounding_right_shift(add_raw(q1, q2, c), c.frac_bits), py)


def mul_raw(q1: int, q2: int, c: IntOpConstants) -> int:
    q1, q2 = int(q1), int(q2)
    return c.k[0] * q1 * q2 + c.k[1] * q1 + c.k[2] * q2 + c.k[3]


def int_mul(q1: int, q2: int, c: IntOpConstants, py: QuantParams) -> int:
    if c.role != "mul":
        raise ValueError(f"constants have role {c.role!r}, need 'mul'")
    return _clip_out(rounding_right_shift(mul_raw(q1, q2, c), c.frac_bits), py)


@dataclass(frozen=True)
class AccumulatorPolicy:
    """Working-width management for the wide dot-product accumulator.

    The natural width is 2n + ceil(log2 N) bits. If that exceeds
    ``working_bits`` and ``rescale`` is set, the product accumulator is
    right-shifted (with rounding) down to the working width and the lost factor
    is folded back when the constants are applied, so the output grid is
    unchanged. With rescale off, overflow is an error.
    """

    working_bits: int = 32
    rescale: bool = True


def accumulator_bits(n: int, length: int) -> int:
    """Bits needed to accumulate N products of two n-bit unsigned integers."""
    if length <= 0:
        return 0
    return 2 * n + int(np.ceil(np.log2(length))) if length > 1 else 2 * n


def _dot_sums(xq, wq) -> tuple[int, int, int]:
    xq = np.asarray(xq, dtype=np.int64)
    wq = np.asarray(wq, dtype=np.int64)
    if xq.shape != wq.shape or xq.ndim != 1:
        raise ValueError(f"need equal-length vectors, got {xq.shape} and {wq.shape}")
    s1 = int(np.dot(xq, wq))
    return s1, int(xq.sum()), int(wq.sum())


def _apply_dot_constants(c: IntOpConstants, s1: int, s2: int, s3: int, n: int,
                         length: int, py: QuantParams,
                         acc_policy: AccumulatorPolicy | None) -> int:
    rescale_shift = 0
    if acc_policy is not None and length > 0:
        need = accumulator_bits(n, length)
        if need > acc_policy.working_bits:
            if not acc_policy.rescale:
                raise AccumulatorOverflowError(
                    f"accumulator needs {need} bits, policy allows "
                    f"{acc_policy.working_bits} and rescale is disabled"
                )
            rescale_shift = need - acc_policy.working_bits
            s1 = rounding_right_shift(s1, rescale_shift)
    # Fold the rescale back so the result stays on the declared output grid.
    raw = (c.k[0] << rescale_shift) * s1 + c.k[1] * s2 + c.k[2] * s3 + c.k[3]
    return _clip_out(rounding_right_shift(raw, c.frac_bits), py)


def int_dot(xq, wq, c: IntOpConstants, py: QuantParams,
            acc_policy: AccumulatorPolicy | None = None) -> int:
    """General integer dot product; handles nonzero offsets on both operands."""
    if c.role != "dot":
        raise ValueError(f"constants have role {c.role!r}, need 'dot'")
    s1, s2, s3 = _dot_sums(xq, wq)
    n = py.master_bitwidth
    return _apply_dot_constants(c, s1, s2, s3, n, len(np.atleast_1d(xq)), py, acc_policy)


def int_dot_pact(xq, wq, c: IntOpConstants, py: QuantParams,
                 acc_policy: AccumulatorPolicy | None = None) -> tuple[int, OpCounters]:
    """Optimized dot product for zero-offset activations.

    With m_x = 0 the k3 term vanishes and k1, k2 factor out of the loop, so the
    inner loop accumulates only sum(x*w) and sum(x): one multiply and two adds
    per element. Returns the result and the in-loop primitive counts.
    """
    if c.role != "dot":
        raise ValueError(f"constants have role {c.role!r}, need 'dot'")
    if c.exact[2] != 0:
        raise ValueError("int_dot_pact requires zero-offset activations (m_x = 0)")
    xq = np.asarray(xq, dtype=np.int64)
    wq = np.asarray(wq, dtype=np.int64)
    if xq.shape != wq.shape or xq.ndim != 1:
        raise ValueError(f"need equal-length vectors, got {xq.shape} and {wq.shape}")
    n_elems = xq.size
    s1 = int(np.dot(xq, wq))
    s2 = int(xq.sum())
    counters = OpCounters(mults=n_elems, adds=2 * n_elems)
    n = py.master_bitwidth
    result = _apply_dot_constants(c, s1, s2, 0, n, n_elems, py, acc_policy)
    return result, counters


def standard_mac_dot(xq, wq, zero_x: int, zero_w: int) -> tuple[int, OpCounters]:
    """Conventional zero-point MAC loop: sum((x - z_x) * (w - z_w)).

    The baseline against which the optimized loop is compared: one multiply and
    three add/subtracts per element, with scaling deferred to a post-loop
    requantization that is not part of this accumulator.
    """
    xq = np.asarray(xq, dtype=np.int64)
    wq = np.asarray(wq, dtype=np.int64)
    if xq.shape != wq.shape or xq.ndim != 1:
        raise ValueError(f"need equal-length vectors, got {xq.shape} and {wq.shape}")
    acc = int(np.dot(xq - zero_x, wq - zero_w))
    return acc, OpCounters(mults=xq.size, adds=3 * xq.size)
