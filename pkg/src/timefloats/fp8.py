"""8-bit floating point word: 4-bit exponent, 4-bit mantissa, hidden leading one.

The sign is carried as a separate flag next to the 8-bit word. The code
(exponent=0, mantissa=0) is reserved for zero; there are no subnormals,
infinities or NaNs.

    value = (-1)^sign * (1 + mantissa/16) * 2^(exponent - 7)

Scalar helpers work on exact rationals; the ``*_array`` variants are numpy
vectorized and bit-identical to the scalar path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

EXP_BITS = 4
MAN_BITS = 4
BIAS = (1 << (EXP_BITS - 1)) - 1  # 7
EXP_MAX = (1 << EXP_BITS) - 1
MAN_MAX = (1 << MAN_BITS) - 1
HIDDEN = 1 << MAN_BITS  # implicit leading one at the significand scale

ROUNDINGS = ("truncate", "nearest")


class Fp8Error(ValueError):
    """Raised for malformed or out-of-range operands."""


@dataclass(frozen=True, order=False)
class Fp8:
    sign: int
    exponent: int
    mantissa: int

    def __post_init__(self):
        if self.sign not in (0, 1):
            raise Fp8Error("sign flag must be 0 or 1")
        if not 0 <= self.exponent <= EXP_MAX:
            raise Fp8Error("exponent code out of range")
        if not 0 <= self.mantissa <= MAN_MAX:
            raise Fp8Error("mantissa code out of range")

    @property
    def is_zero(self) -> bool:
        return self.exponent == 0 and self.mantissa == 0

    @property
    def significand(self) -> int:
        """Integer significand with the hidden one, in [16, 31]."""
        return HIDDEN + self.mantissa

    @property
    def word(self) -> int:
        """Stored 8-bit word, exponent in the high nibble."""
        return (self.exponent << MAN_BITS) | self.mantissa

    def __str__(self) -> str:
        return f"{self.sign}:{self.exponent}:{self.mantissa}"

    def __neg__(self) -> "Fp8":
        return Fp8(self.sign ^ 1, self.exponent, self.mantissa)

    def __float__(self) -> float:
        return decode(self)

    def to_fraction(self) -> Fraction:
        if self.is_zero:
            return Fraction(0)
        mag = Fraction(self.significand, HIDDEN) * Fraction(2) ** (self.exponent - BIAS)
        return -mag if self.sign else mag

    @classmethod
    def parse(cls, text: str) -> "Fp8":
        """Parse the ``s:e:m`` textual form."""
        parts = text.strip().split(":")
        if len(parts) != 3:
            raise Fp8Error(f"expected s:e:m, got {text!r}")
        try:
            s, e, m = (int(p) for p in parts)
        except ValueError:
            raise Fp8Error(f"non-integer field in {text!r}") from None
        return cls(s, e, m)


ZERO = Fp8(0, 0, 0)
MAX_CODE = Fp8(0, EXP_MAX, MAN_MAX)


def decode(a: Fp8) -> float:
    """Exact value of ``a``; every code is a short dyadic so float is exact."""
    if a.is_zero:
        return 0.0
    return math.ldexp(a.significand, a.exponent - BIAS - MAN_BITS) * (-1.0 if a.sign else 1.0)


def _encode_magnitude(mag: Fraction, rounding: str) -> tuple[int, int]:
    """(exponent, mantissa) codes for a positive exact magnitude."""
    # floor(log2(mag)) from integer bit lengths, then fix the off-by-one
    e = mag.numerator.bit_length() - mag.denominator.bit_length()
    if Fraction(2) ** e > mag:
        e -= 1
    code = e + BIAS
    if rounding == "nearest":
        # (0,0) is the zero code, so the smallest nonzero magnitude is (0,1)
        lowest = Fraction(HIDDEN + 1, HIDDEN) * Fraction(2) ** -BIAS
        if mag < lowest:
            return (0, 1) if lowest - mag < mag else (0, 0)
    if code < 0:
        return 0, 0
    if code > EXP_MAX:
        return EXP_MAX, MAN_MAX
    frac = (mag / Fraction(2) ** e - 1) * HIDDEN  # in [0, 16)
    m = math.floor(frac)
    if rounding == "nearest":
        rem = frac - m
        if rem > Fraction(1, 2) or (rem == Fraction(1, 2) and m % 2 == 1):
            m += 1
        if m == HIDDEN:
            m = 0
            code += 1
            if code > EXP_MAX:
                return EXP_MAX, MAN_MAX
    return code, m


def encode(x, rounding: str = "truncate") -> Fp8:
    """Encode a real number (float, int or Fraction).

    ``truncate`` picks the largest representable magnitude not above ``|x|``;
    ``nearest`` rounds ties to even mantissa. Magnitudes under 2^-7 flush to
    zero and magnitudes over the largest code saturate.
    """
    if rounding not in ROUNDINGS:
        raise ValueError(f"unknown rounding {rounding!r}")
    if isinstance(x, float) and not math.isfinite(x):
        raise Fp8Error("non-finite operand")
    q = Fraction(x)
    if q == 0:
        return ZERO
    sign = 1 if q < 0 else 0
    e, m = _encode_magnitude(abs(q), rounding)
    if e == 0 and m == 0:
        return ZERO
    return Fp8(sign, e, m)


def oracle_dot(x: Sequence[Fp8], w: Sequence[Fp8]) -> Fraction:
    """Exact dot product.

    Every product is an integer multiple of 2^(-2*BIAS - 2*MAN_BITS), so the sum
    is accumulated as one wide integer at that scale.
    """
    if len(x) != len(w):
        raise ValueError(f"length mismatch: {len(x)} vs {len(w)}")
    acc = 0
    for a, b in zip(x, w):
        if a.is_zero or b.is_zero:
            continue
        term = (a.significand * b.significand) << (a.exponent + b.exponent)
        acc += -term if a.sign ^ b.sign else term
    return Fraction(acc, 1 << (2 * BIAS + 2 * MAN_BITS))


def all_codes() -> list[Fp8]:
    """Zero plus every nonzero code of both signs."""
    codes = [ZERO]
    for s in (0, 1):
        for e in range(EXP_MAX + 1):
            for m in range(MAN_MAX + 1):
                if e or m:
                    codes.append(Fp8(s, e, m))
    return codes


# ---------------------------------------------------------------------------
# numpy vectorized forms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Fp8Array:
    """Struct-of-arrays Fp8 tensor; all three fields share one shape."""

    sign: np.ndarray
    exponent: np.ndarray
    mantissa: np.ndarray

    @property
    def shape(self):
        return self.sign.shape

    @property
    def is_zero(self) -> np.ndarray:
        return (self.exponent == 0) & (self.mantissa == 0)

    def __getitem__(self, idx) -> "Fp8Array":
        return Fp8Array(self.sign[idx], self.exponent[idx], self.mantissa[idx])

    def reshape(self, *shape) -> "Fp8Array":
        return Fp8Array(self.sign.reshape(*shape), self.exponent.reshape(*shape), self.mantissa.reshape(*shape))

    @property
    def T(self) -> "Fp8Array":
        return Fp8Array(self.sign.T, self.exponent.T, self.mantissa.T)

    def broadcast_to(self, shape) -> "Fp8Array":
        if self.sign.shape == tuple(shape):
            return self
        return Fp8Array(
            np.broadcast_to(self.sign, shape),
            np.broadcast_to(self.exponent, shape),
            np.broadcast_to(self.mantissa, shape),
        )

    def to_list(self) -> list[Fp8]:
        """Flattened list of scalar codes (row-major)."""
        return [
            Fp8(int(s), int(e), int(m))
            for s, e, m in zip(self.sign.ravel(), self.exponent.ravel(), self.mantissa.ravel())
        ]

    def to_codes(self) -> list:
        """Nested lists of ``s:e:m`` strings, same shape as the array."""
        out = np.empty(self.shape, dtype=object)
        for idx in np.ndindex(*self.shape):
            out[idx] = f"{self.sign[idx]}:{self.exponent[idx]}:{self.mantissa[idx]}"
        return out.tolist()

    @classmethod
    def from_list(cls, codes: Sequence[Fp8]) -> "Fp8Array":
        return cls(
            np.array([c.sign for c in codes], dtype=np.int64),
            np.array([c.exponent for c in codes], dtype=np.int64),
            np.array([c.mantissa for c in codes], dtype=np.int64),
        )


def encode_array(x, rounding: str = "truncate") -> Fp8Array:
    """Vectorized :func:`encode` for float arrays."""
    if rounding not in ROUNDINGS:
        raise ValueError(f"unknown rounding {rounding!r}")
    x = np.asarray(x, dtype=np.float64)
    if not np.isfinite(x).all():
        raise Fp8Error("non-finite operand")
    if rounding == "truncate":
        return _truncate_bits(x)
    sign = (x < 0).astype(np.int64)
    frac, exp2 = np.frexp(np.abs(x))  # |x| = frac * 2^exp2, frac in [0.5, 1)
    code = exp2.astype(np.int64) - 1 + BIAS
    scaled = (frac * 2.0 - 1.0) * HIDDEN  # exact in binary64
    m = np.floor(scaled)
    if rounding == "nearest":
        rem = scaled - m
        up = (rem > 0.5) | ((rem == 0.5) & (m % 2 == 1))
        m = m + up
    m = m.astype(np.int64)
    carry = m == HIDDEN
    m = np.where(carry, 0, m)
    code = code + carry
    # (0,0) is the zero code, so below (0,1) pick between zero and (0,1)
    lowest = (HIDDEN + 1) / HIDDEN * 2.0**-BIAS
    mag = np.abs(x)
    small = mag < lowest
    up = small & (lowest - mag < mag)
    code = np.where(small, 0, code)
    m = np.where(small, np.where(up, 1, 0), m)
    zero = (x == 0) | (code < 0) | (small & ~up)
    sat = code > EXP_MAX
    code = np.where(sat, EXP_MAX, np.where(zero, 0, code))
    m = np.where(sat, MAN_MAX, np.where(zero, 0, m))
    sign = np.where((code == 0) & (m == 0), 0, sign)
    return Fp8Array(sign, code, m)


def _truncate_bits(x: np.ndarray) -> Fp8Array:
    # binary64 layout: 1 sign bit, 11 exponent bits (bias 1023), 52 fraction bits;
    # truncation keeps the top MAN_BITS fraction bits
    bits = x.view(np.uint64).astype(np.int64)
    sign = (bits >> 63) & 1
    code = ((bits >> 52) & 0x7FF) - 1023 + BIAS
    m = (bits >> (52 - MAN_BITS)) & MAN_MAX
    zero = (code < 0) | ((code == 0) & (m == 0))
    sat = code > EXP_MAX
    return Fp8Array(
        np.where(zero, 0, sign),
        np.where(zero, 0, np.where(sat, EXP_MAX, code)),
        np.where(zero, 0, np.where(sat, MAN_MAX, m)),
    )


def decode_array(a: Fp8Array) -> np.ndarray:
    mag = np.ldexp((HIDDEN + a.mantissa).astype(np.float64), (a.exponent - BIAS - MAN_BITS).astype(np.int64))
    mag = np.where(a.is_zero, 0.0, mag)
    return np.where(a.sign == 1, -mag, mag)
