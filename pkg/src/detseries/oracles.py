"""Independent slow oracles used to validate the elimination engines.

Two deliberately different routes to the same answers:

* exact rational Laplace expansion (textbook cofactors, Fraction arithmetic,
  capped at n <= 12 because of its exponential cost), and
* the condensation method, which reduces an N x N determinant to
  (N-1) x (N-1) via 2 x 2 subdeterminants; algebraically it performs the
  steps of unpivoted Gaussian elimination, but the code path shares nothing
  with the elimination engines.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import gmpy2
from gmpy2 import mpc, mpfr

from .errors import SizeTooLarge
from .matrix import MatrixBuffer
from .scalars import Precision

ORACLE_SIZE_CAP = 12


def mpfr_to_fraction(x) -> Fraction:
    """Exact rational value of a binary float (always dyadic)."""
    if x == 0:
        return Fraction(0)
    m, e = x.as_mantissa_exp()
    m, e = int(m), int(e)
    if e >= 0:
        return Fraction(m * (1 << e))
    return Fraction(m, 1 << (-e))


@dataclass
class RationalMatrix:
    """Exact square matrix for the factorial-cost oracle (n <= 12)."""

    n: int
    entries: list

    def __post_init__(self):
        if self.n > ORACLE_SIZE_CAP:
            raise SizeTooLarge(f"rational oracle capped at n={ORACLE_SIZE_CAP}, got {self.n}")
        if len(self.entries) != self.n or any(len(r) != self.n for r in self.entries):
            raise ValueError("entries do not form an n x n array")
        self.entries = [[Fraction(x) for x in row] for row in self.entries]

    @classmethod
    def from_buffer(cls, A: MatrixBuffer) -> "RationalMatrix":
        """Exact rational snapshot of a real MatrixBuffer (entries are dyadic)."""
        if A.kind != "real":
            raise ValueError("rational oracle handles real matrices only")
        return cls(A.n, [[mpfr_to_fraction(x) for x in row] for row in A.rows])

    def to_buffer(self, prec: Precision) -> MatrixBuffer:
        with prec.context():
            # mpq -> mpfr is correctly rounded in one step (no double rounding)
            rows = [[mpfr(gmpy2.mpq(x.numerator, x.denominator)) for x in row]
                    for row in self.entries]
        return MatrixBuffer(self.n, "real", prec, rows)

    def transpose(self) -> "RationalMatrix":
        return RationalMatrix(self.n, [list(col) for col in zip(*self.entries)])

    def leading(self, m: int) -> "RationalMatrix":
        return RationalMatrix(m, [row[:m] for row in self.entries[:m]])


def _subdet(entries, rows: tuple, cols: tuple, cache: dict) -> Fraction:
    """Determinant of the submatrix selected by index tuples, memoized."""
    if len(rows) == 1:
        return entries[rows[0]][cols[0]]
    key = (rows, cols)
    hit = cache.get(key)
    if hit is not None:
        return hit
    r0 = rows[0]
    rest = rows[1:]
    acc = Fraction(0)
    sign = 1
    for idx, c in enumerate(cols):
        a = entries[r0][c]
        if a:
            sub = _subdet(entries, rest, cols[:idx] + cols[idx + 1:], cache)
            acc += sign * a * sub
        sign = -sign
    cache[key] = acc
    return acc


def det_cofactor(A: RationalMatrix) -> Fraction:
    """Exact determinant by Laplace expansion along the first row."""
    idx = tuple(range(A.n))
    return _subdet(A.entries, idx, idx, {})


def cofactors_of_column(A: RationalMatrix, col: int) -> list:
    """Exact signed cofactors of 1-based column ``col``:

    result[k-1] = (-1)^(k+col) * det(A without row k and column col).
    """
    if not 1 <= col <= A.n:
        raise ValueError(f"column {col} out of range")
    if A.n == 1:
        return [Fraction(1)]
    cols = tuple(j for j in range(A.n) if j != col - 1)
    cache: dict = {}
    out = []
    for k in range(1, A.n + 1):
        rows = tuple(i for i in range(A.n) if i != k - 1)
        minor = _subdet(A.entries, rows, cols, cache)
        out.append(minor if (k + col) % 2 == 0 else -minor)
    return out


def _condense_step(rows, variant):
    """One condensation step; returns (pivot, next_rows) or (None, None) when
    the first row is entirely zero (determinant is zero)."""
    N = len(rows)
    first = rows[0]
    l = next((j for j in range(N) if first[j] != 0), None)
    if l is None:
        return None, None
    piv = first[l]
    if variant == "factor":
        # Pre-divide the pivot column, then condense with pivot value 1.
        col = [r[l] / piv for r in rows]
        out = []
        for i in range(1, N):
            row = []
            for j in range(N - 1):
                if j < l:
                    row.append(-rows[i][j])
                else:
                    row.append(rows[i][j + 1] - col[i] * first[j + 1])
            out.append(row)
        return piv, out
    # variant == "divide": raw 2x2 subdeterminants, correction applied later.
    out = []
    for i in range(1, N):
        ail = rows[i][l]
        row = []
        for j in range(N - 1):
            if j < l:
                row.append(-rows[i][j] * piv)
            else:
                row.append(piv * rows[i][j + 1] - ail * first[j + 1])
        out.append(row)
    return piv, out


def _condensation(rows, zero, variant):
    if len(rows) == 1:
        return rows[0][0]
    if variant == "factor":
        acc = None
        while len(rows) > 1:
            piv, rows = _condense_step(rows, "factor")
            if piv is None:
                return zero
            acc = piv if acc is None else acc * piv
        return acc * rows[0][0]
    # divide: form the raw 2x2 subdeterminants, then divide the condensed
    # matrix by the pivot.  det(prev) = piv * det(next) then holds at every
    # step.  The division must happen per step: deferring the piv^(N-2)
    # corrections to the end doubles entry degrees each step and runs out of
    # exponent range near n = 30 in floating point.
    acc = None
    while len(rows) > 1:
        piv, rows = _condense_step(rows, "divide")
        if piv is None:
            return zero
        rows = [[x / piv for x in row] for row in rows]
        acc = piv if acc is None else acc * piv
    return acc * rows[0][0]


def det_condensation(A, variant: str = "factor"):
    """Determinant of A by the condensation method.

    variant='divide' follows the raw 2x2-subdeterminant recursion, dividing
    the condensed matrix by the pivot after each step; variant='factor'
    pre-divides the pivot column before condensing.  Both accumulate the
    determinant as a product of pivots.  A matrix whose condensation hits an all-zero first row is
    singular and yields exactly zero.  Accepts a MatrixBuffer (rounded
    arithmetic at its precision) or a RationalMatrix (exact).
    """
    if variant not in ("divide", "factor"):
        raise ValueError(f"unknown condensation variant {variant!r}")
    if isinstance(A, RationalMatrix):
        rows = [list(r) for r in A.entries]
        return _condensation(rows, Fraction(0), variant)
    if not isinstance(A, MatrixBuffer):
        raise TypeError("expected MatrixBuffer or RationalMatrix")
    with A.prec.context():
        zero = mpc(0) if A.kind == "complex" else mpfr(0)
        rows = [list(r) for r in A.rows]
        return _condensation(rows, zero, variant)
