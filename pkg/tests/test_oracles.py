import random
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from detseries.elim import eliminate
from detseries.errors import SizeTooLarge
from detseries.matrix import MatrixBuffer
from detseries.oracles import (ORACLE_SIZE_CAP, RationalMatrix,
                               cofactors_of_column, det_cofactor,
                               det_condensation, mpfr_to_fraction)
from detseries.scalars import Precision

small_fracs = st.fractions(min_value=-5, max_value=5, max_denominator=4)


def rat(rows):
    return RationalMatrix(len(rows), rows)


class TestCofactorOracle:
    def test_2x2(self):
        assert det_cofactor(rat([[1, 2], [3, 4]])) == -2

    def test_identity_5(self):
        I5 = [[int(i == j) for j in range(5)] for i in range(5)]
        assert det_cofactor(rat(I5)) == 1

    def test_hilbert_4(self):
        H = [[Fraction(1, i + j + 1) for j in range(4)] for i in range(4)]
        assert det_cofactor(rat(H)) == Fraction(1, 6048000)

    def test_size_cap(self):
        big = [[0] * (ORACLE_SIZE_CAP + 1) for _ in range(ORACLE_SIZE_CAP + 1)]
        with pytest.raises(SizeTooLarge):
            rat(big)


class TestCofactorsOfColumn:
    def test_2x2_col2(self):
        assert cofactors_of_column(rat([[1, 2], [3, 4]]), 2) == [-3, 1]

    def test_identity_col3(self):
        I3 = [[int(i == j) for j in range(3)] for i in range(3)]
        assert cofactors_of_column(rat(I3), 3) == [0, 0, 1]

    def test_3x3_col3(self):
        A = rat([[2, 1, 1], [1, 3, 2], [1, 0, 0]])
        assert cofactors_of_column(A, 3) == [-3, 1, 5]

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.lists(small_fracs, min_size=4, max_size=4),
                    min_size=4, max_size=4), st.integers(1, 4))
    def test_laplace_expansion_identity(self, rows, col):
        A = rat(rows)
        cof = cofactors_of_column(A, col)
        expanded = sum(c * rows[k][col - 1] for k, c in enumerate(cof))
        assert expanded == det_cofactor(A)


class TestCondensation:
    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.lists(small_fracs, min_size=5, max_size=5),
                    min_size=5, max_size=5))
    def test_both_variants_match_cofactor(self, rows):
        A = rat(rows)
        exact = det_cofactor(A)
        assert det_condensation(A, "factor") == exact
        assert det_condensation(A, "divide") == exact

    def test_interior_zero_handled(self):
        # a matrix whose condensation pivot is not in column 1
        A = rat([[0, 2, 1], [3, 0, 1], [1, 1, 0]])
        assert det_condensation(A, "factor") == det_cofactor(A)
        assert det_condensation(A, "divide") == det_cofactor(A)

    def test_singular_yields_zero(self):
        A = rat([[1, 2], [2, 4]])
        assert det_condensation(A, "factor") == 0
        assert det_condensation(A, "divide") == 0

    def test_float_buffer_matches_elimination(self):
        prec = Precision(256)
        rng = random.Random(12)
        rows = [[rng.uniform(-1, 1) for _ in range(10)] for _ in range(10)]
        A = MatrixBuffer.from_rows(rows, prec)
        trace, _ = eliminate(A.copy(), collect_minors=False)
        from detseries.scalars import agree_digits
        for variant in ("factor", "divide"):
            d = det_condensation(A.copy(), variant)
            assert agree_digits(d, trace.det(10)) >= 60

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            det_condensation(rat([[1]]), "bogus")


class TestConversions:
    def test_mpfr_to_fraction_exact(self):
        from gmpy2 import mpfr
        with Precision(128).context():
            x = mpfr(3) / 4 + mpfr(2) ** -100
        f = mpfr_to_fraction(x)
        assert f == Fraction(3, 4) + Fraction(1, 2 ** 100)

    def test_buffer_round_trip(self):
        H = [[Fraction(1, i + j + 1) for j in range(4)] for i in range(4)]
        A = rat(H)
        B = A.to_buffer(Precision(512))
        back = RationalMatrix.from_buffer(B)
        # entries are correctly rounded, so re-reading differs from the
        # rationals by < 2^-511 relative
        for i in range(4):
            for j in range(4):
                diff = abs(back.entries[i][j] - H[i][j])
                assert diff <= Fraction(1, 2 ** 500) * H[i][j]

    def test_transpose_and_leading(self):
        A = rat([[1, 2], [3, 4]])
        assert A.transpose().entries == [[1, 3], [2, 4]]
        assert A.leading(1).entries == [[1]]
