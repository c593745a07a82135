"""Accuracy-loss study: run the same elimination at two precisions, measure
how many decimal digits of the normalized minors agree as a function of the
leading size n, and fit a regression line to the decay.

The agreement per size n is summarized as the average and minimum over the
n entries of the normalized minor row.  Per-entry agreement is clamped at
the digit capacity of the lower precision (values cannot meaningfully agree
beyond what the narrower run can represent, and the exact-equality sentinel
would otherwise poison the fit).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .elim import MinorSeries, eliminate
from .errors import InsufficientData, SeriesMismatch, ZeroPivot
from .matrix import MatrixBuffer
from .scalars import Precision, agree_digits


@dataclass
class AgreementRow:
    n: int
    avg_digits: float
    min_digits: float
    count: int
    valid: bool


@dataclass
class AgreementSeries:
    """Digit-agreement curve over leading sizes, for one matrix and one
    precision pair."""

    prec_lo_bits: int
    prec_hi_bits: int
    rows: list = field(default_factory=list)

    def valid_points(self, n_min=None, n_max=None):
        return [(r.n, r.avg_digits) for r in self.rows
                if r.valid
                and (n_min is None or r.n >= n_min)
                and (n_max is None or r.n <= n_max)]


@dataclass
class RegressionFit:
    slope: float
    intercept: float
    r_squared: float
    n_range: tuple
    #: decay translated to bits lost per elimination row operation
    slope_bits_per_op: float = 0.0

    def __post_init__(self):
        self.slope_bits_per_op = self.slope * math.log2(10)


def digit_agreement(series_lo: MinorSeries, series_hi: MinorSeries) -> AgreementSeries:
    """Per-size digit agreement between two minor series of the same matrix.

    Symmetric in its arguments.  Sizes where either run lacks a normalized
    row (zero-pivot divergence or undefined normalization) are flagged
    invalid and excluded from fits.
    """
    if (series_lo.fingerprint is not None and series_hi.fingerprint is not None
            and series_lo.fingerprint != series_hi.fingerprint):
        raise SeriesMismatch("minor series come from different input matrices")
    sizes = sorted(set(series_lo.sizes()) | set(series_hi.sizes()))
    if not sizes:
        raise SeriesMismatch("empty minor series")
    ceiling = min(series_lo.prec.decimal_digits, series_hi.prec.decimal_digits)
    out = AgreementSeries(min(series_lo.prec.bits, series_hi.prec.bits),
                          max(series_lo.prec.bits, series_hi.prec.bits))
    for n in sizes:
        a = series_lo.rows.get(n)
        b = series_hi.rows.get(n)
        if (a is None or b is None
                or a.normalized is None or b.normalized is None):
            out.rows.append(AgreementRow(n, 0.0, 0.0, 0, False))
            continue
        digits = [min(agree_digits(x, y), ceiling)
                  for x, y in zip(a.normalized, b.normalized)]
        out.rows.append(AgreementRow(
            n, sum(digits) / len(digits), float(min(digits)), len(digits), True))
    return out


def fit_decay(series: AgreementSeries, n_min: int, n_max: int) -> RegressionFit:
    """Ordinary least squares of avg_digits against n over [n_min, n_max]."""
    pts = series.valid_points(n_min, n_max)
    if len(pts) < 10:
        raise InsufficientData(
            f"{len(pts)} valid points in [{n_min}, {n_max}], need >= 10")
    xs = np.array([p[0] for p in pts], dtype=float)
    ys = np.array([p[1] for p in pts], dtype=float)
    slope, intercept = np.polyfit(xs, ys, 1)
    resid = ys - (slope * xs + intercept)
    ss_res = float(np.sum(resid ** 2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return RegressionFit(float(slope), float(intercept), r2, (n_min, n_max))


def study_matrix(source: MatrixBuffer, p_lo: Precision, p_hi: Precision,
                 limit_n: int | None = None) -> AgreementSeries:
    """Round one source matrix to both precisions, eliminate each, and
    measure agreement.  A ZeroPivot in either run truncates that series;
    the divergent sizes come out flagged invalid.
    """
    fingerprint = source.fingerprint()
    series = []
    for p in (p_lo, p_hi):
        A = source.round_to(p)
        if limit_n is not None and limit_n < A.n:
            A = MatrixBuffer(limit_n, A.kind, p,
                             [row[:limit_n] for row in A.rows[:limit_n]])
        try:
            _, ms = eliminate(A)
        except ZeroPivot as exc:
            ms = exc.series if exc.series is not None else MinorSeries(p)
        ms.fingerprint = fingerprint
        series.append(ms)
    return digit_agreement(series[0], series[1])


def write_csv(series: AgreementSeries, path):
    with open(path, "w") as f:
        f.write("n,avg_digits,min_digits,valid\n")
        for r in series.rows:
            f.write(f"{r.n},{r.avg_digits:.6f},{r.min_digits:.6f},{int(r.valid)}\n")


def format_fit(fit: RegressionFit) -> str:
    return (f"slope={fit.slope:.9g} intercept={fit.intercept:.9g} "
            f"r2={fit.r_squared:.9g} slope_bits_per_op={fit.slope_bits_per_op:.9g} "
            f"n_min={fit.n_range[0]} n_max={fit.n_range[1]}")
