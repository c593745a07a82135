import math

import pytest
from gmpy2 import mpfr

from detseries.elim import MinorRow, MinorSeries, eliminate
from detseries.errors import InsufficientData, SeriesMismatch
from detseries.genmat import synth_matrix
from detseries.precstudy import (AgreementRow, AgreementSeries, digit_agreement,
                                 fit_decay, format_fit, study_matrix, write_csv)
from detseries.scalars import Precision


def _series_of(matrix):
    _, minors = eliminate(matrix.copy())
    minors.fingerprint = None
    return minors


def _linear_agreement(n_max, slope, intercept):
    rows = [AgreementRow(n, intercept + slope * n, 0.0, n, True)
            for n in range(2, n_max + 1)]
    return AgreementSeries(256, 1024, rows)


class TestDigitAgreement:
    def test_identical_series_hit_clamp(self):
        A = synth_matrix("random_uniform", 8, 1, Precision(256))
        agr = digit_agreement(_series_of(A), _series_of(A))
        ceiling = Precision(256).decimal_digits
        for row in agr.rows:
            assert row.valid
            assert row.avg_digits == ceiling
            assert row.min_digits == ceiling

    def test_clamped_to_lower_precision_digits(self):
        # agreement can never exceed what the coarser operand can represent
        A = synth_matrix("random_uniform", 8, 1, Precision(1024))
        lo = _series_of(A.round_to(Precision(256)))
        hi = _series_of(A)
        agr = digit_agreement(lo, hi)
        cap = Precision(256).decimal_digits
        assert all(r.avg_digits <= cap for r in agr.rows if r.valid)

    def test_fingerprint_mismatch_rejected(self):
        A = synth_matrix("random_uniform", 6, 1, Precision(256))
        B = synth_matrix("random_uniform", 6, 2, Precision(256))
        _, sa = eliminate(A.copy())
        _, sb = eliminate(B.copy())
        sa.fingerprint = A.fingerprint()
        sb.fingerprint = B.fingerprint()
        with pytest.raises(SeriesMismatch):
            digit_agreement(sa, sb)

    def test_symmetry(self):
        A = synth_matrix("random_uniform", 8, 3, Precision(512))
        lo = _series_of(A.round_to(Precision(128)))
        hi = _series_of(A)
        fwd = digit_agreement(lo, hi)
        rev = digit_agreement(hi, lo)
        assert [(r.n, r.avg_digits) for r in fwd.rows] == \
               [(r.n, r.avg_digits) for r in rev.rows]

    def test_missing_or_unnormalized_rows_flagged_invalid(self):
        prec = Precision(128)
        with prec.context():
            one, zero = mpfr(1), mpfr(0)
        full = MinorSeries(prec=prec)
        full.rows[2] = MinorRow(2, [one, one], [one, one])
        full.rows[3] = MinorRow(3, [one, one, one], [one, one, one])
        short = MinorSeries(prec=prec)
        short.rows[2] = MinorRow(2, [zero, one], None)  # undefined normalization
        agr = digit_agreement(short, full)
        flags = {r.n: r.valid for r in agr.rows}
        assert flags == {2: False, 3: False}


class TestFitDecay:
    def test_recovers_synthetic_slope(self):
        fit = fit_decay(_linear_agreement(40, -0.375, 300.0), 2, 40)
        assert abs(fit.slope - -0.375) < 1e-9
        assert abs(fit.intercept - 300.0) < 1e-9
        assert fit.r_squared == pytest.approx(1.0)
        assert fit.slope_bits_per_op == pytest.approx(-0.375 * math.log2(10))

    def test_constant_series_slope_zero_r2_one(self):
        fit = fit_decay(_linear_agreement(30, 0.0, 77.0), 2, 30)
        assert abs(fit.slope) < 1e-12
        assert fit.r_squared == 1.0

    def test_range_restriction(self):
        rows = ([AgreementRow(n, 100.0, 0, n, True) for n in range(2, 15)]
                + [AgreementRow(n, 500.0 - 10 * n, 0, n, True)
                   for n in range(15, 40)])
        fit = fit_decay(AgreementSeries(64, 128, rows), 15, 39)
        assert abs(fit.slope - -10.0) < 1e-9

    def test_insufficient_points(self):
        with pytest.raises(InsufficientData):
            fit_decay(_linear_agreement(8, -1.0, 50.0), 2, 8)

    def test_invalid_rows_excluded(self):
        series = _linear_agreement(20, -1.0, 100.0)
        series.rows = [AgreementRow(r.n, r.avg_digits, r.min_digits, r.count,
                                    r.n % 2 == 0) for r in series.rows]
        fit = fit_decay(series, 2, 20)
        assert abs(fit.slope - -1.0) < 1e-9
        assert len(series.valid_points(2, 20)) == 10


class TestStudyMatrix:
    def test_end_to_end_hilbert(self):
        A = synth_matrix("hilbert", 12, 0, Precision(1024))
        agr = study_matrix(A, Precision(128), Precision(512))
        assert agr.prec_lo_bits == 128 and agr.prec_hi_bits == 512
        assert [r.n for r in agr.rows] == list(range(2, 13))
        valid = [r for r in agr.rows if r.valid]
        assert len(valid) >= 8
        # Hilbert agreement decays with n
        assert valid[-1].avg_digits < valid[0].avg_digits

    def test_limit_n(self):
        A = synth_matrix("random_uniform", 12, 4, Precision(512))
        agr = study_matrix(A, Precision(128), Precision(256), limit_n=6)
        assert max(r.n for r in agr.rows) == 6


class TestOutput:
    def test_write_csv(self, tmp_path):
        p = tmp_path / "agreement.csv"
        write_csv(_linear_agreement(5, -1.0, 30.0), p)
        lines = p.read_text().splitlines()
        assert lines[0] == "n,avg_digits,min_digits,valid"
        assert lines[1].startswith("2,28.000000,")
        assert lines[1].endswith(",1")

    def test_format_fit(self):
        fit = fit_decay(_linear_agreement(20, -0.5, 100.0), 2, 20)
        text = format_fit(fit)
        for key in ("slope=", "intercept=", "r2=", "slope_bits_per_op=",
                    "n_min=2", "n_max=20"):
            assert key in text
