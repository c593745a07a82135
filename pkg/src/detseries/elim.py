"""Single-pass Gaussian elimination producing the determinant series and the
signed-minor series of every leading submatrix.

The method: eliminate on the augmented matrix [A | I] without pivoting.  The
row operations that bring A to row-echelon form U accumulate the lower
triangular transform L (L A = U).  After step n-1 the n-th row of L is
final, and the signed minors of the leading n x n submatrix with respect to
its n-th column are that row scaled by the determinant of the leading
(n-1) x (n-1) submatrix:

    signed_minor[n][k] = det(leading n-1) * L[n][k],   L[n][n] = 1.

(The product of L's row n with A's column n is the n-th pivot
u_nn = det_n / det_{n-1}; multiplying by det_{n-1} turns the row into the
cofactor vector, whose product with column n is det_n.)  So one elimination
pass yields det(leading n) and all cofactors of column n of every leading
submatrix, for every n, at no extra asymptotic cost.

Everything runs in place: L's strictly-lower entries overwrite the dead
below-diagonal slots of A (slot (j,i) dies once pivot i has consumed it and
immediately receives l_ji), and L's unit diagonal lives in the buffer's
aux_diag.  Auxiliary allocation is O(n) scalars beyond the buffer.

The per-row update helper is shared verbatim by the parallel and paged
executors, which is what makes their outputs bit-identical to this one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import NormalizationUndefined, ZeroPivot
from .matrix import MatrixBuffer
from .scalars import Precision, canonical_bits


def apply_pivot_to_row(row, prow, i, collect_minors=True):
    """Apply elimination step ``i`` (0-based) to a later row, in place.

    ``prow`` is the pivot row: slots < i hold L's row i+1, slot i the pivot,
    slots > i the row-echelon part.  ``row`` uses the same layout and is
    updated to its post-step state; slot i receives the new L entry -z.
    Operation order is fixed (L slots ascending, then A slots ascending) so
    every execution path performs the identical rounding sequence.
    """
    piv = prow[i]
    z = row[i] / piv
    if collect_minors:
        for k in range(i):
            row[k] = row[k] - z * prow[k]
    for k in range(i + 1, len(row)):
        row[k] = row[k] - z * prow[k]
    row[i] = -z


def minors_row_from_l(l_entries, det_prev):
    """Signed minors for size n from L's row n (strictly-lower entries) and
    det(leading n-1).  The implicit unit diagonal contributes det_prev."""
    signed = [det_prev * v for v in l_entries]
    signed.append(det_prev)
    return signed


@dataclass
class EliminationTrace:
    """Pivots and leading-submatrix determinants from one elimination run.

    det_series[m] (0-based) is the determinant of the leading (m+1) x (m+1)
    submatrix of the original matrix; step is the number of completed pivot
    steps (== n unless a zero pivot aborted the run).
    """

    n: int
    prec: Precision
    pivots: list = field(default_factory=list)
    det_series: list = field(default_factory=list)
    step: int = 0

    def det(self, m: int):
        """Determinant of the leading m x m submatrix (1-based m)."""
        return self.det_series[m - 1]

    def same_bits(self, other: "EliminationTrace") -> bool:
        return (self.step == other.step
                and len(self.det_series) == len(other.det_series)
                and all(canonical_bits(a) == canonical_bits(b)
                        for a, b in zip(self.det_series, other.det_series))
                and all(canonical_bits(a) == canonical_bits(b)
                        for a, b in zip(self.pivots, other.pivots)))


@dataclass
class MinorRow:
    """Signed and normalized minors of one leading n x n submatrix w.r.t.
    its n-th column; normalized is None when the leading minor is zero."""

    n: int
    signed: list
    normalized: list | None


class MinorSeries:
    """Collection of MinorRow objects keyed by leading size n (n >= 2)."""

    def __init__(self, prec: Precision, fingerprint: str | None = None):
        self.prec = prec
        self.fingerprint = fingerprint
        self.rows: dict[int, MinorRow] = {}

    def add(self, row: MinorRow):
        self.rows[row.n] = row

    def row(self, n: int) -> MinorRow:
        return self.rows[n]

    def sizes(self):
        return sorted(self.rows)

    def same_bits(self, other: "MinorSeries") -> bool:
        if self.sizes() != other.sizes():
            return False
        for n in self.sizes():
            a, b = self.rows[n], other.rows[n]
            if len(a.signed) != len(b.signed):
                return False
            if any(canonical_bits(x) != canonical_bits(y)
                   for x, y in zip(a.signed, b.signed)):
                return False
            if (a.normalized is None) != (b.normalized is None):
                return False
            if a.normalized is not None and any(
                    canonical_bits(x) != canonical_bits(y)
                    for x, y in zip(a.normalized, b.normalized)):
                return False
        return True


def normalize_minors(signed):
    """Divide a signed-minor row by its first entry; first result is exact 1.

    Raises NormalizationUndefined when the leading minor is zero.
    """
    if not signed:
        raise ValueError("empty minor row")
    lead = signed[0]
    if lead == 0:
        raise NormalizationUndefined("leading signed minor is zero")
    return [x / lead for x in signed]


def _attach_normalized(row: MinorRow):
    try:
        row.normalized = normalize_minors(row.signed)
    except NormalizationUndefined:
        row.normalized = None


def eliminate(A: MatrixBuffer, collect_minors: bool = True, series: bool = True,
              sink=None, pivot_mode: str = "none", trace: EliminationTrace | None = None,
              start_step: int = 0, step_hook=None):
    """Gaussian elimination of A in place.

    Returns (trace, minor_series) where minor_series is None unless
    collect_minors.  With series=True a MinorRow is emitted for every
    leading size n = 2..N as soon as it is final (streamed to ``sink`` when
    given, otherwise collected); with series=False only the full-size row is
    produced.

    pivot_mode='partial' enables row-swap pivoting for determinant-only
    runs; it is rejected with collect_minors because row swaps permute the
    cofactor bookkeeping.  Zero-pivot detection is exact-zero only: the
    target matrices are nearly singular and legitimately produce tiny
    pivots, so no epsilon threshold is applied.

    ``trace``/``start_step`` resume a run from a checkpointed buffer whose
    first start_step pivot steps were already applied (trace must hold their
    pivots); ``step_hook(completed_steps, A, trace)`` runs after every step
    and stops the elimination early when it returns True (the caller can
    checkpoint and re-enter later).

    Raises ZeroPivot (carrying the partial trace and series) when a leading
    submatrix is exactly singular.
    """
    if pivot_mode not in ("none", "partial"):
        raise ValueError(f"unknown pivot_mode {pivot_mode!r}")
    if pivot_mode == "partial" and collect_minors:
        raise ValueError("partial pivoting cannot be combined with minors collection")
    if pivot_mode == "partial" and start_step:
        raise ValueError("resume is only supported without pivoting")

    n = A.n
    rows = A.rows
    if trace is None:
        trace = EliminationTrace(n=n, prec=A.prec)
    elif len(trace.pivots) != start_step:
        raise ValueError("resume trace does not match start_step")
    out = MinorSeries(A.prec) if collect_minors else None
    emit = sink if sink is not None else (out.add if out is not None else None)

    with A.prec.context():
        det = trace.det_series[-1] if trace.det_series else None
        sign = 1
        for i in range(start_step, n):
            if pivot_mode == "partial":
                best = max(range(i, n), key=lambda j: abs(rows[j][i]))
                if best != i:
                    rows[i], rows[best] = rows[best], rows[i]
                    sign = -sign
            piv = rows[i][i]
            if piv == 0:
                trace.step = i
                raise ZeroPivot(i + 1, trace=trace, series=out)
            trace.pivots.append(piv)
            det = piv if det is None else det * piv
            trace.det_series.append(det if sign > 0 else -det)
            prow = rows[i]
            for j in range(i + 1, n):
                apply_pivot_to_row(rows[j], prow, i, collect_minors)
            trace.step = i + 1
            if collect_minors and i + 1 < n:
                m = i + 2
                if series or m == n:
                    signed = minors_row_from_l(rows[i + 1][:i + 1], trace.det_series[i])
                    row = MinorRow(m, signed, None)
                    _attach_normalized(row)
                    emit(row)
            if step_hook is not None and step_hook(i + 1, A, trace):
                break
    return trace, out


def laplace_residual(n: int, original: MatrixBuffer, series: MinorSeries,
                     trace: EliminationTrace):
    """Relative residual of the Laplace expansion check at leading size n:

        | sum_k signed[n][k] * a_{k,n}  -  det(leading n) | / |det(leading n)|

    using the original (pre-elimination) matrix entries.
    """
    if n > trace.step or n not in series.rows:
        raise ValueError(f"size {n} not covered by the completed elimination")
    with original.prec.context():
        signed = series.rows[n].signed
        acc = signed[0] * original.entry(1, n)
        for k in range(2, n + 1):
            acc = acc + signed[k - 1] * original.entry(k, n)
        det_n = trace.det(n)
        return abs(acc - det_n) / abs(det_n)
