"""Exact numbers and canonical binary expansions.

Probabilities live in ``[0, 1]`` as :class:`fractions.Fraction`. A dyadic
``a / 2**L`` streams its terminating expansion (then zeros forever); the value
``1`` streams all ones.
"""

from __future__ import annotations

from fractions import Fraction
from numbers import Rational
from typing import Union

Number = Union[int, float, str, Fraction]

DEFAULT_TRUNCATION = 53


class NonDyadic(ValueError):
    """A probability has no terminating binary expansion."""

    def __init__(self, value: Fraction, suggested_bits: int = DEFAULT_TRUNCATION):
        self.value = value
        self.suggested_bits = suggested_bits
        super().__init__(
            f"{value} is not dyadic; truncate it first, e.g. "
            f"truncate({value}, {suggested_bits})"
        )


def to_fraction(x: Number) -> Fraction:
    """Parse ``x`` exactly. Floats map to their exact binary value; strings may be ``"p/q"``."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, bool):
        raise TypeError("booleans are not numbers here")
    if isinstance(x, (int, Rational)):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(x)
    if isinstance(x, str):
        return Fraction(x.strip())
    raise TypeError(f"cannot interpret {x!r} as a number")


def fraction_str(x: Fraction) -> str:
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


def is_dyadic(x: Fraction) -> bool:
    d = x.denominator
    return d & (d - 1) == 0


def expansion_length(x: Fraction) -> int:
    """Number of bits before the periodic tail (zeros, or ones for ``x == 1``)."""
    if not 0 <= x <= 1:
        raise ValueError(f"{x} is outside [0, 1]")
    if x == 1:
        return 0
    if not is_dyadic(x):
        raise NonDyadic(x)
    return x.denominator.bit_length() - 1


def prefix(x: Fraction, r: int) -> int:
    """The first ``r`` bits of the canonical expansion of ``x`` as an integer."""
    if x == 1:
        return (1 << r) - 1
    return (x.numerator << r) // x.denominator


def bit(x: Fraction, r: int) -> int:
    """Bit ``r`` (1-based) of the canonical expansion."""
    return prefix(x, r) & 1


def truncate(x: Number, bits: int) -> Fraction:
    """Round ``x`` down to a multiple of ``2**-bits``."""
    x = to_fraction(x)
    return Fraction((x.numerator << bits) // x.denominator, 1 << bits)


def check_probability(x: Fraction, what: str = "probability") -> Fraction:
    if not 0 <= x <= 1:
        raise ValueError(f"{what} {x} is outside [0, 1]")
    return x
