"""Dense square matrix storage shared by the elimination engines.

A MatrixBuffer owns a row-major n x n array of scalars at one shared
precision plus the auxiliary diagonal that lets the triangular factor share
the buffer with the matrix during in-place elimination.  The MPMAT text
format provides bit-exact persistence.
"""

from __future__ import annotations

import hashlib
from typing import Callable

import gmpy2
from gmpy2 import mpc, mpfr

from .errors import ParseError, PrecisionMismatch
from .scalars import Precision, canonical_bits, format_scalar, parse_scalar

MPMAT_MAGIC = "MPMAT"
MPMAT_VERSION = 1


class MatrixBuffer:
    """Row-major dense square matrix of shared-precision scalars.

    ``rows[i][j]`` is entry (i+1, j+1) in 1-based terms.  During elimination
    the slots strictly below the diagonal are reused for the triangular
    factor; ``aux_diag`` holds the factor's (unit) diagonal so both matrices
    fit in one buffer.
    """

    def __init__(self, n: int, kind: str, prec: Precision, rows=None):
        if kind not in ("real", "complex"):
            raise ValueError(f"kind must be 'real' or 'complex', got {kind!r}")
        if n < 1:
            raise ValueError("matrix dimension must be positive")
        self.n = n
        self.kind = kind
        self.prec = prec
        with prec.context():
            zero = mpc(0) if kind == "complex" else mpfr(0)
            one = mpc(1) if kind == "complex" else mpfr(1)
        if rows is None:
            rows = [[zero for _ in range(n)] for _ in range(n)]
        else:
            if len(rows) != n or any(len(r) != n for r in rows):
                raise ValueError("rows do not form an n x n array")
            self._check_precision(rows)
        self.rows = rows
        self.aux_diag = [one for _ in range(n)]

    def _check_precision(self, rows):
        bits = self.prec.bits
        for row in rows:
            for x in row:
                p = x.real.precision if isinstance(x, mpc) else x.precision
                if p != bits:
                    raise PrecisionMismatch(
                        f"scalar precision {p} != buffer precision {bits}")

    @classmethod
    def from_rows(cls, rows, prec: Precision, kind: str | None = None) -> "MatrixBuffer":
        """Build a buffer from nested lists of numbers, rounding at ``prec``."""
        n = len(rows)
        if kind is None:
            kind = "complex" if any(
                isinstance(x, (complex, mpc)) for row in rows for x in row) else "real"
        with prec.context():
            conv = mpc if kind == "complex" else mpfr
            data = [[conv(x) for x in row] for row in rows]
        return cls(n, kind, prec, data)

    @classmethod
    def generate(cls, n: int, kind: str, prec: Precision,
                 entry: Callable[[int, int], object]) -> "MatrixBuffer":
        """Fill from a 1-based entry generator ``entry(i, j)``."""
        with prec.context():
            conv = mpc if kind == "complex" else mpfr
            data = [[conv(entry(i + 1, j + 1)) for j in range(n)] for i in range(n)]
        return cls(n, kind, prec, data)

    def copy(self) -> "MatrixBuffer":
        with self.prec.context():
            conv = mpc if self.kind == "complex" else mpfr
            data = [[conv(x) for x in row] for row in self.rows]
        return MatrixBuffer(self.n, self.kind, self.prec, data)

    def entry(self, i: int, j: int):
        """1-based entry access."""
        return self.rows[i - 1][j - 1]

    def round_to(self, prec: Precision) -> "MatrixBuffer":
        """Copy rounded to a different working precision."""
        with prec.context():
            conv = mpc if self.kind == "complex" else mpfr
            data = [[conv(x) for x in row] for row in self.rows]
        return MatrixBuffer(self.n, self.kind, prec, data)

    def fingerprint(self) -> str:
        """Content hash identifying the exact bit pattern of the matrix."""
        h = hashlib.sha256()
        h.update(f"{self.kind}:{self.n}:{self.prec.bits}".encode())
        for row in self.rows:
            for x in row:
                h.update(repr(canonical_bits(x)).encode())
        return h.hexdigest()

    def save(self, path):
        """Write the MPMAT text format (bit-exact round trip)."""
        with open(path, "w") as f:
            f.write(f"{MPMAT_MAGIC} {MPMAT_VERSION} {self.kind} {self.n} {self.prec.bits}\n")
            for row in self.rows:
                for x in row:
                    f.write(format_scalar(x) + "\n")

    @classmethod
    def load(cls, path) -> "MatrixBuffer":
        try:
            f = open(path)
        except OSError as exc:
            raise ParseError(f"cannot read {path}: {exc}")
        with f:
            header = f.readline().split()
            if len(header) != 5 or header[0] != MPMAT_MAGIC:
                raise ParseError(f"{path}: not an MPMAT file")
            if int(header[1]) != MPMAT_VERSION:
                raise ParseError(f"{path}: unsupported MPMAT version {header[1]}")
            kind, n, bits = header[2], int(header[3]), int(header[4])
            prec = Precision(bits)
            data = []
            for i in range(n):
                row = []
                for j in range(n):
                    line = f.readline()
                    if not line:
                        raise ParseError(f"{path}: truncated after {i * n + j} scalars")
                    row.append(parse_scalar(line, prec, kind))
                data.append(row)
        return cls(n, kind, prec, data)

    def same_bits(self, other: "MatrixBuffer") -> bool:
        if (self.n, self.kind, self.prec) != (other.n, other.kind, other.prec):
            return False
        return all(canonical_bits(a) == canonical_bits(b)
                   for ra, rb in zip(self.rows, other.rows)
                   for a, b in zip(ra, rb))
