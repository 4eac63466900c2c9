"""Fast polynomial log2/exp2 over IEEE 754 single-precision encodings.

A positive normal float32 is 2**(e-127) * 1.m, so log2 reduces to
(e - 127) + p(y) where y in [0, 1) is the fractional mantissa and p is a
degree-5 polynomial interpolating log2(1+y): values and first derivatives
matched at y in {0, 0.5, 1}.  Evaluated by Horner with the leading zero
coefficient dropped, one call costs exactly 5 multiplications and 6
additions (the subtraction e - 127 counts as one of them); the bit
manipulations to obtain e and y are free in hardware.

exp2 mirrors the construction: split x into integer part n and fraction f,
evaluate a degree-5 interpolant of 2**f fitted the same way, and scale by
2**n through exponent assembly (ldexp).  Integer inputs are exact because
the interpolant's constant term is exactly 1.

Inputs are interpreted through their float32 encoding; the polynomial
arithmetic itself runs in float64.  These routines are inference-mode
substitutes for exact ln/exp and are never used during training.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .tensor import DomainError

# Degree-5 interpolation of log2(1+y) on [0,1]: values and derivatives
# matched at {0, 0.5, 1}.  Max absolute error ~7.0e-5 near y=0.2.
LOG2_COEFFS = (0.0, 1.44269504, -0.71249131, 0.42046732, -0.1955884, 0.04491735)

# Same construction for 2**f on [0,1].  Constant term exactly 1.0, so
# integer powers of two are reproduced bit-exactly.  Max rel. error ~4.3e-7.
EXP2_COEFFS = (
    1.0,
    0.6931471805599453,
    0.24017440574158222,
    0.0558117479332082,
    0.008970203549165223,
    0.0018964622160990707,
)

LN2 = float(np.log(2.0))
LOG2E = float(np.log2(np.e))

_EXP_MASK = 0xFF
_MANT_MASK = 0x7FFFFF
_MANT_SCALE = 2.0**-23
_MAX_FINITE32 = float(np.finfo(np.float32).max)


@dataclass(frozen=True)
class FloatParts:
    """Sign bit, biased 8-bit exponent, and 23-bit mantissa of a float32."""

    sign: int
    exponent: int
    mantissa: int

    def assemble(self) -> float:
        bits = (self.sign << 31) | (self.exponent << 23) | self.mantissa
        return float(np.uint32(bits).view(np.float32))


def _float32_bits(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float32).view(np.uint32)


def split_float(x: float) -> FloatParts:
    """Exact decomposition of a positive normal float32 value."""
    xf = np.float32(x)
    if not np.isfinite(xf):
        raise DomainError(f"cannot split non-finite value {x!r}")
    bits = int(_float32_bits(xf))
    sign = bits >> 31
    exponent = (bits >> 23) & _EXP_MASK
    mantissa = bits & _MANT_MASK
    if sign or xf <= 0:
        raise DomainError(f"split_float requires x > 0, got {x!r}")
    if exponent == 0:
        raise DomainError(f"subnormal input {x!r}")
    if exponent == _EXP_MASK:
        raise DomainError(f"non-finite input {x!r}")
    return FloatParts(sign, exponent, mantissa)


def _horner_log2(y):
    # C0 == 0 is omitted; counts as 5 muls and 4 adds.
    c = LOG2_COEFFS
    p = c[5] * y + c[4]
    p = p * y + c[3]
    p = p * y + c[2]
    p = p * y + c[1]
    return p * y


def log2_approx(x):
    """Approximate log2 of positive normal values, scalar or ndarray.

    Decomposes the float32 encoding of x and applies the polynomial to the
    fractional mantissa.  Absolute error <= ~7e-5 against true log2.
    """
    x = np.asarray(x)
    scalar = x.ndim == 0
    xf = x.astype(np.float32)
    bits = xf.view(np.uint32)
    e = ((bits >> 23) & _EXP_MASK).astype(np.int64)
    bad = (xf <= 0) | ~np.isfinite(xf) | (e == 0) | (e == _EXP_MASK)
    if np.any(bad):
        raise DomainError("log2_approx requires positive, finite, normal inputs")
    y = (bits & _MANT_MASK).astype(np.float64) * _MANT_SCALE
    out = (e - 127) + _horner_log2(y)
    return float(out) if scalar else out


def log2_approx_counted(x: float) -> tuple[float, dict[str, int]]:
    """log2_approx on one scalar, counting every multiply and add performed.

    The sequence mirrors log2_approx exactly; the returned tally is
    {mul: 5, add: 6} by construction of the Horner evaluation.
    """
    parts = split_float(x)
    y = parts.mantissa * _MANT_SCALE  # bit manipulation + fixed scale, free in hardware
    n = {"mul": 0, "add": 0}

    def fmul(a, b):
        n["mul"] += 1
        return a * b

    def fadd(a, b):
        n["add"] += 1
        return a + b

    c = LOG2_COEFFS
    p = fadd(fmul(c[5], y), c[4])
    p = fadd(fmul(p, y), c[3])
    p = fadd(fmul(p, y), c[2])
    p = fadd(fmul(p, y), c[1])
    p = fmul(p, y)
    ebiased = fadd(parts.exponent, -127.0)
    return fadd(ebiased, p), n


def exp2_approx(x):
    """Approximate 2**x for |x| <= 126, scalar or ndarray.

    Values above the float32 exponent range saturate to the largest finite
    float32 (below it, flush to zero); either case emits a RuntimeWarning.
    Relative error <= ~5e-7 inside the supported range.
    """
    x = np.asarray(x, dtype=np.float64)
    scalar = x.ndim == 0
    over = x > 127.0
    under = x < -126.0
    if np.any(over) or np.any(under):
        warnings.warn("exp2_approx input outside float32 exponent range; saturating", RuntimeWarning)
    xc = np.clip(x, -126.0, 127.0)
    n = np.floor(xc)
    f = xc - n
    c = EXP2_COEFFS
    p = c[5] * f + c[4]
    p = p * f + c[3]
    p = p * f + c[2]
    p = p * f + c[1]
    p = p * f + c[0]
    out = np.ldexp(p, n.astype(np.int64))
    out = np.where(over, _MAX_FINITE32, out)
    out = np.where(under, 0.0, out)
    return float(out) if scalar else out


def ln_approx(x):
    return log2_approx(x) * LN2


def exp_approx(x):
    return exp2_approx(np.asarray(x, dtype=np.float64) * LOG2E)


def _interp_system(values, derivs):
    pts = (0.0, 0.5, 1.0)
    A = np.zeros((6, 6))
    b = np.zeros(6)
    for r, t in enumerate(pts):
        A[r] = [t**i for i in range(6)]
        b[r] = values(t)
        A[3 + r] = [i * t ** (i - 1) if i >= 1 else 0.0 for i in range(6)]
        b[3 + r] = derivs(t)
    return np.linalg.solve(A, b)


def derive_log2_coefficients() -> np.ndarray:
    """Re-solve the 6x6 value/derivative system defining LOG2_COEFFS."""
    return _interp_system(lambda t: np.log2(1.0 + t), lambda t: 1.0 / ((1.0 + t) * LN2))


def derive_exp2_coefficients() -> np.ndarray:
    """Re-solve the 6x6 value/derivative system defining EXP2_COEFFS."""
    return _interp_system(lambda t: 2.0**t, lambda t: LN2 * 2.0**t)
