"""Analytic error bounds for the integer operators and their verification.

Every operator's deviation from the exact quantized value is a linear
combination of the constant rounding errors delta_i = k_real - k / 2^F, scaled
by the integer inputs. The oracles here use exact rational arithmetic, so
bound checks are never confounded by float rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .intops import (
    IntOpConstants,
    add_constants,
    add_raw,
    dot_constants,
    mul_constants,
    mul_raw,
)
from .quantize import QuantParams, make_master_params, round_half_away_int

OP_KINDS = ("add", "mul", "dot", "shift")


@dataclass(frozen=True)
class ErrorBound:
    """Composed worst-case error for one operator instance."""

    op_kind: str
    deltas: tuple[Fraction, ...]
    bound: Fraction
    magnitudes: tuple[int, ...]


def op_error_bound(consts: IntOpConstants, magnitudes=None) -> ErrorBound:
    """Worst-case |integer op - exact quantized value| from the deltas.

    ``magnitudes`` are per-operand maxima: (q1, q2) for add/mul, bounds on the
    three accumulator sums for dot. Defaults to the full quantized range is the
    caller's job; here absent magnitudes default per role from the exact ratios'
    context being unknown, so they must be supplied for add/mul/dot.
    """
    deltas = consts.deltas()
    mags = tuple(int(m) for m in magnitudes)
    if consts.role == "add":
        q1, q2 = mags
        bound = abs(deltas[0]) * q1 + abs(deltas[1]) * q2 + abs(deltas[2])
    elif consts.role == "mul":
        q1, q2 = mags
        bound = (abs(deltas[0]) * q1 * q2 + abs(deltas[1]) * q1
                 + abs(deltas[2]) * q2 + abs(deltas[3]))
    elif consts.role == "dot":
        s1, s2, s3 = mags
        bound = (abs(deltas[0]) * s1 + abs(deltas[1]) * s2
                 + abs(deltas[2]) * s3 + abs(deltas[3]))
    else:
        raise ValueError(f"no bound formula for role {consts.role!r}")
    return ErrorBound(op_kind=consts.role, deltas=deltas, bound=bound, magnitudes=mags)


def shift_error(q_n: int, n: int, b: int) -> Fraction:
    """Exact residual of the rounded shift: q / 2^(n-b) minus its rounding."""
    if b > n:
        raise ValueError(f"b={b} > n={n}")
    exact = Fraction(int(q_n), 1 << (n - b))
    return exact - round_half_away_int(exact)


def _exact_ratios(c: IntOpConstants) -> tuple[Fraction, ...]:
    return c.exact


def exact_add_value(q1: int, q2: int, c: IntOpConstants) -> Fraction:
    """(x1 + x2 - m_y) / step_y with exact real-valued constants."""
    r = _exact_ratios(c)
    return r[0] * q1 + r[1] * q2 + r[2]


def exact_mul_value(q1: int, q2: int, c: IntOpConstants) -> Fraction:
    r = _exact_ratios(c)
    return r[0] * q1 * q2 + r[1] * q1 + r[2] * q2 + r[3]


def exact_dot_value(s1: int, s2: int, s3: int, c: IntOpConstants) -> Fraction:
    r = _exact_ratios(c)
    return r[0] * s1 + r[1] * s2 + r[2] * s3 + r[3]


@dataclass
class Violation:
    op_kind: str
    params: tuple
    inputs: tuple
    observed: float
    bound: float


@dataclass
class VerificationReport:
    """Outcome of an empirical bound-verification run."""

    op_kind: str
    cases: int
    max_observed: float
    max_bound: float
    violations: list[Violation] = field(default_factory=list)
    mean_signed_error: float = 0.0
    seed: int | None = None

    @property
    def passed(self) -> bool:
        return not self.violations


def _random_params(rng, n: int) -> QuantParams:
    lo = rng.uniform(-4.0, 2.0)
    hi = lo + rng.uniform(0.25, 8.0)
    return make_master_params(lo, hi, n)


# Random-instance verification draws several input cases per parameter tuple
# so the exact-rational constants are amortized; the case count is what the
# sample budget controls.
CASES_PER_TUPLE = 50


def _common_denominator_terms(c: IntOpConstants):
    """Exact ratios and deltas of one constant set over one shared denominator.

    Returns (m, numerators, delta_numerators) such that exact ratio i equals
    numerators[i] / m and delta i equals delta_numerators[i] / m. With a shared
    denominator the per-case bound check reduces to integer arithmetic.
    """
    two_f = 1 << c.frac_bits
    d = 1
    for r in c.exact:
        d = d * r.denominator // math.gcd(d, r.denominator)
    m = d * two_f
    nums = tuple(r.numerator * (d // r.denominator) * two_f for r in c.exact)
    delta_nums = tuple(n - k * d for n, k in zip(nums, c.k))
    return m, nums, delta_nums


def _verify_binary(op_kind: str, param_sampler, samples: int, seed: int,
                   frac_bits: int) -> VerificationReport:
    rng = np.random.default_rng(seed)
    make_consts = add_constants if op_kind == "add" else mul_constants
    raw_fn = add_raw if op_kind == "add" else mul_raw
    report = VerificationReport(op_kind=op_kind, cases=0, max_observed=0.0,
                                max_bound=0.0, seed=seed)
    signed_sum = Fraction(0)
    two_f = 1 << frac_bits
    while report.cases < samples:
        p1, p2, py = param_sampler(rng)
        c = make_consts(p1, p2, py, frac_bits)
        m, nums, deltas = _common_denominator_terms(c)
        ad = tuple(abs(d) for d in deltas)
        q1s = rng.integers(0, p1.qmax + 1, size=CASES_PER_TUPLE)
        q2s = rng.integers(0, p2.qmax + 1, size=CASES_PER_TUPLE)
        tuple_signed = 0
        worst_err = 0
        worst_bound = 0
        for q1, q2 in zip(q1s.tolist(), q2s.tolist()):
            # Compare at pre-shift resolution so the final output rounding does
            # not enter: (raw / 2^F) - exact is the delta combination exactly.
            # All quantities are over the tuple's shared denominator m.
            if op_kind == "add":
                exact_num = nums[0] * q1 + nums[1] * q2 + nums[2]
                bound_num = ad[0] * q1 + ad[1] * q2 + ad[2]
            else:
                q12 = q1 * q2
                exact_num = (nums[0] * q12 + nums[1] * q1
                             + nums[2] * q2 + nums[3])
                bound_num = ad[0] * q12 + ad[1] * q1 + ad[2] * q2 + ad[3]
            err_num = raw_fn(q1, q2, c) * (m // two_f) - exact_num
            report.cases += 1
            tuple_signed += err_num
            worst_err = max(worst_err, abs(err_num))
            worst_bound = max(worst_bound, bound_num)
            if abs(err_num) > bound_num:
                report.violations.append(Violation(
                    op_kind, (p1, p2, py), (q1, q2),
                    float(Fraction(err_num, m)), float(Fraction(bound_num, m))))
        signed_sum += Fraction(tuple_signed, m)
        report.max_observed = max(report.max_observed, float(Fraction(worst_err, m)))
        report.max_bound = max(report.max_bound, float(Fraction(worst_bound, m)))
    report.mean_signed_error = float(signed_sum / max(report.cases, 1))
    return report


def _verify_dot(param_sampler, samples: int, seed: int, frac_bits: int,
                length: int = 64) -> VerificationReport:
    rng = np.random.default_rng(seed)
    report = VerificationReport(op_kind="dot", cases=0, max_observed=0.0,
                                max_bound=0.0, seed=seed)
    signed_sum = Fraction(0)
    two_f = 1 << frac_bits
    while report.cases < samples:
        px, pw, py = param_sampler(rng)
        c = dot_constants(px, pw, py, length, frac_bits)
        m, nums, deltas = _common_denominator_terms(c)
        ad = tuple(abs(d) for d in deltas)
        m_over_f = m // two_f
        xqs = rng.integers(0, px.qmax + 1, size=(CASES_PER_TUPLE, length))
        wqs = rng.integers(0, pw.qmax + 1, size=(CASES_PER_TUPLE, length))
        s1s = np.einsum("ij,ij->i", xqs, wqs)
        s2s = xqs.sum(axis=1)
        s3s = wqs.sum(axis=1)
        tuple_signed = 0
        worst_err = 0
        worst_bound = 0
        for s1, s2, s3 in zip(s1s.tolist(), s2s.tolist(), s3s.tolist()):
            raw = c.k[0] * s1 + c.k[1] * s2 + c.k[2] * s3 + c.k[3]
            exact_num = nums[0] * s1 + nums[1] * s2 + nums[2] * s3 + nums[3]
            err_num = raw * m_over_f - exact_num
            bound_num = ad[0] * s1 + ad[1] * s2 + ad[2] * s3 + ad[3]
            report.cases += 1
            tuple_signed += err_num
            worst_err = max(worst_err, abs(err_num))
            worst_bound = max(worst_bound, bound_num)
            if abs(err_num) > bound_num:
                report.violations.append(Violation(
                    "dot", (px, pw, py), (s1, s2, s3),
                    float(Fraction(err_num, m)), float(Fraction(bound_num, m))))
        signed_sum += Fraction(tuple_signed, m)
        report.max_observed = max(report.max_observed, float(Fraction(worst_err, m)))
        report.max_bound = max(report.max_bound, float(Fraction(worst_bound, m)))
    report.mean_signed_error = float(signed_sum / max(report.cases, 1))
    return report


def _verify_shift(n_values=range(2, 9)) -> VerificationReport:
    report = VerificationReport(op_kind="shift", cases=0, max_observed=0.0,
                                max_bound=0.5)
    half = Fraction(1, 2)
    signed_sum = Fraction(0)
    for n in n_values:
        for b in range(2, n + 1):
            for q in range(1 << n):
                eps = shift_error(q, n, b)
                report.cases += 1
                signed_sum += eps
                report.max_observed = max(report.max_observed, abs(float(eps)))
                if abs(eps) > half:
                    report.violations.append(Violation(
                        "shift", (n, b), (q,), float(eps), 0.5))
    report.mean_signed_error = float(signed_sum / max(report.cases, 1))
    return report


def default_param_sampler(rng) -> tuple[QuantParams, QuantParams, QuantParams]:
    n = int(rng.integers(4, 9))
    return _random_params(rng, n), _random_params(rng, n), _random_params(rng, n)


def empirical_verify(op_kind: str, param_sampler=None, samples: int = 100_000,
                     seed: int = 0, frac_bits: int = 0) -> VerificationReport:
    """Sample operator instances and check every one against its bound.

    A passing report has zero violations; any violation carries the full tuple
    needed to reproduce it.
    """
    if op_kind not in OP_KINDS:
        raise ValueError(f"unknown op kind {op_kind!r}")
    sampler = param_sampler or default_param_sampler
    if op_kind == "shift":
        return _verify_shift()
    if op_kind == "dot":
        return _verify_dot(sampler, samples, seed, frac_bits)
    return _verify_binary(op_kind, sampler, samples, seed, frac_bits)


def exhaustive_verify_binary(op_kind: str, n: int, param_tuples,
                             frac_bits: int = 0) -> VerificationReport:
    """Check every (q1, q2) pair for each given parameter triple."""
    make_consts = add_constants if op_kind == "add" else mul_constants
    raw_fn = add_raw if op_kind == "add" else mul_raw
    exact_fn = exact_add_value if op_kind == "add" else exact_mul_value
    report = VerificationReport(op_kind=op_kind, cases=0, max_observed=0.0,
                                max_bound=0.0)
    qmax = (1 << n) - 1
    for p1, p2, py in param_tuples:
        c = make_consts(p1, p2, py, frac_bits)
        two_f = 1 << frac_bits
        for q1 in range(qmax + 1):
            for q2 in range(qmax + 1):
                err = Fraction(raw_fn(q1, q2, c), two_f) - exact_fn(q1, q2, c)
                bound = op_error_bound(c, (q1, q2)).bound
                report.cases += 1
                report.max_observed = max(report.max_observed, abs(float(err)))
                report.max_bound = max(report.max_bound, float(bound))
                if abs(err) > bound:
                    report.violations.append(Violation(
                        op_kind, (p1, p2, py), (q1, q2), float(err), float(bound)))
    return report
