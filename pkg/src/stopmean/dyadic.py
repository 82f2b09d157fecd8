"""Exact signed dyadic rationals ``mantissa * 2**exponent``.

Every finite binary64 float is a dyadic rational, so floats convert losslessly;
the ``inexact`` flag only records that a value came from floating point
arithmetic.  Comparisons never shift by more than the difference of the two
bit lengths, which keeps values such as ``2**-(2**40 + 1)`` cheap to handle.
"""

from __future__ import annotations

import math
import re
from fractions import Fraction
from functools import total_ordering
from typing import Union

__all__ = ["DyadicValue", "as_dyadic", "h_value"]

_LITERAL = re.compile(r"^\s*([+-]?\d+)\s*\*\s*2\s*\^\s*([+-]?\d+)\s*$")


def _normalize(mantissa: int, exponent: int) -> tuple[int, int]:
    if mantissa == 0:
        return 0, 0
    # strip trailing zero bits
    tz = (mantissa & -mantissa).bit_length() - 1
    return mantissa >> tz, exponent + tz


@total_ordering
class DyadicValue:
    """A normalized dyadic rational (mantissa odd, or zero with exponent 0)."""

    __slots__ = ("mantissa", "exponent", "inexact")

    def __init__(self, mantissa: int, exponent: int = 0, inexact: bool = False):
        m, e = _normalize(int(mantissa), int(exponent))
        object.__setattr__(self, "mantissa", m)
        object.__setattr__(self, "exponent", e)
        object.__setattr__(self, "inexact", bool(inexact))

    def __setattr__(self, name, value):
        raise AttributeError("DyadicValue is immutable")

    def __reduce__(self):
        return (DyadicValue, (self.mantissa, self.exponent, self.inexact))

    @classmethod
    def from_float(cls, x: float) -> "DyadicValue":
        if not math.isfinite(x):
            raise ValueError(f"non-finite sample {x!r}")
        num, den = float(x).as_integer_ratio()
        return cls(num, -(den.bit_length() - 1), inexact=True)

    @classmethod
    def parse(cls, text: str) -> "DyadicValue":
        """Parse ``"m*2^e"`` literals or plain decimal/integer strings."""
        match = _LITERAL.match(text)
        if match:
            return cls(int(match.group(1)), int(match.group(2)))
        try:
            return cls(int(text))
        except ValueError:
            pass
        frac = Fraction(text)
        den = frac.denominator
        if den & (den - 1):
            raise ValueError(f"{text!r} is not a dyadic rational")
        return cls(frac.numerator, -(den.bit_length() - 1))

    # --- arithmetic helpers -------------------------------------------------

    def sign(self) -> int:
        return (self.mantissa > 0) - (self.mantissa < 0)

    def _top(self) -> int:
        """Exponent of the leading bit plus one: ``|x|`` lies in ``[2**(t-1), 2**t)``."""
        return self.exponent + abs(self.mantissa).bit_length()

    def _cmp(self, other: "DyadicValue") -> int:
        sa, sb = self.sign(), other.sign()
        if sa != sb:
            return -1 if sa < sb else 1
        if sa == 0:
            return 0
        ta, tb = self._top(), other._top()
        if ta != tb:
            mag = -1 if ta < tb else 1
            return mag * sa
        # same leading bit position: the shift is bounded by the mantissa lengths
        e = min(self.exponent, other.exponent)
        a = self.mantissa << (self.exponent - e)
        b = other.mantissa << (other.exponent - e)
        return (a > b) - (a < b)

    def __eq__(self, other):
        if isinstance(other, (int, float)):
            other = as_dyadic(other)
        if not isinstance(other, DyadicValue):
            return NotImplemented
        return self.mantissa == other.mantissa and self.exponent == other.exponent

    def __lt__(self, other):
        if isinstance(other, (int, float)):
            other = as_dyadic(other)
        if not isinstance(other, DyadicValue):
            return NotImplemented
        return self._cmp(other) < 0

    def __hash__(self):
        return hash((self.mantissa, self.exponent))

    def __neg__(self):
        return DyadicValue(-self.mantissa, self.exponent, self.inexact)

    def __abs__(self):
        return DyadicValue(abs(self.mantissa), self.exponent, self.inexact)

    def __sub__(self, other: "DyadicValue") -> "DyadicValue":
        other = as_dyadic(other)
        e = min(self.exponent, other.exponent)
        return DyadicValue(
            (self.mantissa << (self.exponent - e)) - (other.mantissa << (other.exponent - e)),
            e,
            self.inexact or other.inexact,
        )

    def __add__(self, other: "DyadicValue") -> "DyadicValue":
        return self - (-as_dyadic(other))

    def floor_scaled(self, k: int) -> int:
        """``floor(x * 2**k)`` without rounding."""
        shift = self.exponent + k
        if shift >= 0:
            return self.mantissa << shift
        if -shift > abs(self.mantissa).bit_length():
            return -1 if self.mantissa < 0 else 0
        return self.mantissa >> -shift

    def to_fraction(self) -> Fraction:
        if self.exponent >= 0:
            return Fraction(self.mantissa << self.exponent)
        return Fraction(self.mantissa, 1 << -self.exponent)

    def __float__(self) -> float:
        if self.mantissa == 0:
            return 0.0
        top = self._top()
        if top < -1100:
            return math.copysign(0.0, self.mantissa)
        if top > 1100:
            return math.copysign(math.inf, self.mantissa)
        m, e = self.mantissa, self.exponent
        bl = abs(m).bit_length()
        if bl > 64:
            # keep enough bits for correct rounding via Fraction
            return float(self.to_fraction())
        return math.ldexp(float(m), e)

    def is_float_exact(self) -> bool:
        f = float(self)
        return math.isfinite(f) and (f != 0.0 or self.mantissa == 0) and as_dyadic(f) == self

    def literal(self) -> str:
        return f"{self.mantissa}*2^{self.exponent}"

    def __str__(self) -> str:
        if self.is_float_exact():
            return repr(float(self))
        return self.literal()

    def __repr__(self) -> str:
        return f"DyadicValue({self.mantissa}, {self.exponent})"


Number = Union[DyadicValue, int, float]


def as_dyadic(x: Number) -> DyadicValue:
    if isinstance(x, DyadicValue):
        return x
    if isinstance(x, bool):
        return DyadicValue(int(x))
    if isinstance(x, int):
        return DyadicValue(x)
    return DyadicValue.from_float(float(x))


def h_value(i: int) -> DyadicValue:
    """Value map of the divergence counterexample chain: 0, 1, then ``2**-(2**i) / 2``."""
    if i < 0:
        raise ValueError("state index must be nonnegative")
    if i == 0:
        return DyadicValue(0)
    if i == 1:
        return DyadicValue(1)
    return DyadicValue(1, -((1 << i) + 1))
