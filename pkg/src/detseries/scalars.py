"""Arbitrary-precision scalar layer.

Real scalars are ``gmpy2.mpfr`` values, complex scalars are ``gmpy2.mpc``
values; both carry their precision and all arithmetic is correctly rounded
(round-to-nearest-even) at the precision of the active gmpy2 context.  This
module supplies the precision bookkeeping, text parsing/formatting with
guaranteed decimal round-trip, and the digit-agreement metric used by the
accuracy-loss study.

Exact rationals (the oracle scalar) are ``fractions.Fraction`` values, which
already satisfy the lowest-terms / positive-denominator contract.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction

import gmpy2
from gmpy2 import mpc, mpfr

from .errors import ParseError

MIN_PRECISION_BITS = 64

#: Sentinel returned by agree_digits for exactly equal values, large enough
#: to be recognizable and small enough not to poison regression arithmetic.
AGREE_DIGITS_CEILING = 1_000_000

_REAL_TOKEN = re.compile(r"^[-+]?[0-9]+(\.[0-9]+)?([eE][-+]?[0-9]+)?$")

Rational = Fraction


@dataclass(frozen=True)
class Precision:
    """Mantissa length in bits shared by every scalar of one computation."""

    bits: int

    def __post_init__(self):
        if self.bits < MIN_PRECISION_BITS:
            raise ValueError(f"precision must be >= {MIN_PRECISION_BITS} bits, got {self.bits}")

    @property
    def decimal_digits(self) -> int:
        """Number of significant decimal digits representable, rounded down."""
        return int(self.bits * math.log10(2))

    def context(self):
        """A gmpy2 context rounding to nearest at this precision."""
        return gmpy2.context(precision=self.bits)


def context(prec: Precision):
    """Shorthand for ``prec.context()`` usable as a context manager."""
    return prec.context()


def prec_of(x) -> Precision:
    """Precision carried by a scalar (real part precision for complex)."""
    if isinstance(x, mpc):
        return Precision(x.real.precision)
    return Precision(x.precision)


def parse_scalar(text: str, prec: Precision, kind: str = "real"):
    """Parse a decimal token (real) or a whitespace-separated pair (complex).

    The result is the correctly rounded representation at ``prec``.
    """
    if kind == "real":
        token = text.strip()
        if not _REAL_TOKEN.match(token):
            raise ParseError(f"malformed real scalar {text!r}")
        with prec.context():
            return mpfr(token)
    if kind == "complex":
        tokens = text.split()
        if len(tokens) != 2 or not all(_REAL_TOKEN.match(t) for t in tokens):
            raise ParseError(f"malformed complex scalar {text!r} (expected '<re> <im>')")
        with prec.context():
            return mpc(mpfr(tokens[0]), mpfr(tokens[1]))
    raise ParseError(f"unknown scalar kind {kind!r}")


def format_scalar(x, digits: int | None = None) -> str:
    """Decimal text for a scalar; round-trips bit-exactly through parse_scalar
    when ``digits`` is left at its default (prec*log10(2) + 3)."""
    if isinstance(x, mpc):
        return f"{format_scalar(x.real, digits)} {format_scalar(x.imag, digits)}"
    if not gmpy2.is_finite(x):
        raise ParseError(f"cannot format non-finite scalar {x!r}")
    if digits is None:
        digits = int(x.precision * math.log10(2)) + 3
    digstr, exp10, _ = x.digits(10, digits)
    sign = ""
    if digstr.startswith("-"):
        sign, digstr = "-", digstr[1:]
    if set(digstr) == {"0"}:
        return sign + "0"
    return f"{sign}0.{digstr}e{exp10}"


def agree_digits(a, b, ceiling: int = AGREE_DIGITS_CEILING) -> int:
    """Number of coinciding decimal places between two scalars.

    Defined as floor(-log10(|a-b| / max(|a|, |b|))): 0 when the relative
    error is >= 1 (this covers opposite signs), ``ceiling`` on exact
    equality.  Complex values are compared through moduli of the same
    expressions.  The relative-error form is scale invariant, which matters
    because normalized minors span hundreds of orders of magnitude.
    """
    bits = max(prec_of(a).bits, prec_of(b).bits)
    with gmpy2.context(precision=bits):
        if a == b:
            return ceiling
        scale = max(abs(a), abs(b))
        if scale == 0:
            return ceiling
        rel = abs(a - b) / scale
        if rel >= 1:
            return 0
        return int(math.floor(-gmpy2.log10(rel)))


def canonical_bits(x):
    """Hashable canonical form of a scalar: equal iff bit-identical values.

    Trailing zero bits of the significand are stripped so that the form does
    not depend on storage precision internals, only on the represented value
    (plus the sign of zero).
    """
    if isinstance(x, mpc):
        return ("c", canonical_bits(x.real), canonical_bits(x.imag))
    if not gmpy2.is_finite(x):
        raise ValueError(f"non-finite scalar {x!r}")
    if x == 0:
        return ("r", "-0" if gmpy2.is_signed(x) else "+0")
    m, e = x.as_mantissa_exp()
    m, e = int(m), int(e)
    tz = (m & -m).bit_length() - 1
    return ("r", m >> tz, e + tz)


def same_bits(a, b) -> bool:
    """True when two scalars are bit-identical (value and zero sign)."""
    return canonical_bits(a) == canonical_bits(b)
