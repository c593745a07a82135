"""Matrix generators: ingested zeta-zero data, the two interpolating matrix
families built on it, and synthetic test families.

Zeros are always ingested from files, never computed here; producing them to
high precision is an external input (scripts/make_zeros.py regenerates the
bundled data file with mpmath).
"""

from __future__ import annotations

from dataclasses import dataclass

import gmpy2
from gmpy2 import mpc, mpfr

from .errors import GammaEvaluationFailed, InsufficientZeros, NotMonotone, ParseError
from .matrix import MatrixBuffer
from .scalars import _REAL_TOKEN, Precision, format_scalar

#: First positive zero ordinate, used as an ingestion sanity anchor.
FIRST_ZERO_ANCHOR = "14.1347251417"


@dataclass
class ZetaZeros:
    """Strictly increasing positive ordinates of nontrivial zeta zeros."""

    gammas: list
    source_precision_bits: int

    def __len__(self):
        return len(self.gammas)

    def require(self, count: int):
        if len(self.gammas) < count:
            raise InsufficientZeros(
                f"need {count} zeros, have {len(self.gammas)}")


def load_zeros(path, prec: Precision, count: int, verify_anchor: bool = True) -> ZetaZeros:
    """Read the first ``count`` zero ordinates from a text file.

    One decimal value per line, '#' comment lines and blanks ignored.  Values
    are rounded at ``prec`` and validated: positive, strictly increasing,
    and (unless disabled) the first one matching the universally known first
    zero to 10 decimal places.
    """
    if count <= 0:
        return ZetaZeros([], prec.bits)
    gammas = []
    with open(path) as f, prec.context():
        for lineno, line in enumerate(f, 1):
            token = line.strip()
            if not token or token.startswith("#"):
                continue
            if not _REAL_TOKEN.match(token):
                raise ParseError(f"{path}:{lineno}: malformed zero {token!r}")
            gammas.append(mpfr(token))
            if len(gammas) == count:
                break
    if len(gammas) < count:
        raise InsufficientZeros(f"{path} holds {len(gammas)} zeros, need {count}")
    if any(g <= 0 for g in gammas):
        raise ParseError(f"{path}: zero ordinates must be positive")
    if any(b <= a for a, b in zip(gammas, gammas[1:])):
        raise NotMonotone(f"{path}: zeros are not strictly increasing")
    if verify_anchor and count > 0:
        with gmpy2.context(precision=64):
            if abs(gammas[0] - mpfr(FIRST_ZERO_ANCHOR)) > mpfr("1e-9"):
                raise ParseError(
                    f"{path}: first zero {format_scalar(gammas[0], 12)} does not match "
                    f"the known value {FIRST_ZERO_ANCHOR}")
    return ZetaZeros(gammas, prec.bits)


def save_zeros(zeros: ZetaZeros, path, header: str = ""):
    """Write zeros in the load_zeros format with bit-exact round trip."""
    with open(path, "w") as f:
        if header:
            for line in header.splitlines():
                f.write(f"# {line}\n")
        for g in zeros.gammas:
            f.write(format_scalar(g) + "\n")


class SpougeGamma:
    """Complex Gamma via the Spouge series at arbitrary precision.

    Gamma(z) = (z-1+a)^(z-1/2) exp(-(z-1+a)) (c0 + sum_k c_k/(z-1+k)),
    with a chosen so the truncation error is below the target precision and
    a working precision raised by ``guard_bits`` to absorb rounding noise in
    the alternating sum.  Valid for Re(z) > 0, which covers the
    Gamma(1/4 +- it/2) evaluations this library needs.
    """

    def __init__(self, guard_bits: int = 64):
        self.guard_bits = guard_bits
        self._coeff_cache: dict = {}

    def _coefficients(self, a: int, work_bits: int):
        key = (a, work_bits)
        cached = self._coeff_cache.get(key)
        if cached is not None:
            return cached
        with gmpy2.context(precision=work_bits):
            coeffs = [gmpy2.sqrt(2 * gmpy2.const_pi())]
            for k in range(1, a):
                mag = gmpy2.exp((k - mpfr(1) / 2) * gmpy2.log(a - k) + (a - k))
                c = mag / gmpy2.factorial(k - 1)
                coeffs.append(c if k % 2 == 1 else -c)
        self._coeff_cache[key] = coeffs
        return coeffs

    def evaluate(self, z, prec: Precision):
        """Gamma(z) correct to prec up to a few ulps of final rounding."""
        zz = mpc(z)
        if zz.real <= 0:
            raise GammaEvaluationFailed(
                f"Spouge evaluator requires Re(z) > 0, got {z}")
        bits = prec.bits
        # truncation error ~ (2*pi)^-(a+1/2), i.e. ~2.65 bits gained per term
        a = int((bits + self.guard_bits) / 2.65) + 5
        # The alternating sum cancels: ~0.45 bits per term plus, for arguments
        # far from the real axis, up to pi/(2 ln 2) bits per unit of |Im z|
        # (Gamma's exponential decay must come out of the sum).  Seed the
        # working precision from that estimate, then verify the realized
        # cancellation and retry wider if the margin is short.
        y = abs(float(zz.imag))
        work = bits + self.guard_bits + int(0.45 * a) + int(2.27 * y) + 32
        for _ in range(6):
            coeffs = self._coefficients(a, work)
            with gmpy2.context(precision=work):
                x = mpc(zz) - 1
                acc = mpc(coeffs[0])
                max_term = abs(acc)
                for k in range(1, a):
                    term = coeffs[k] / (x + k)
                    t = abs(term)
                    if t > max_term:
                        max_term = t
                    acc = acc + term
                base = x + a
                result = gmpy2.exp((x + mpfr(1) / 2) * gmpy2.log(base) - base) * acc
                if acc != 0:
                    cancelled = int(gmpy2.log2(max_term / abs(acc))) + 1
                else:
                    cancelled = work
            if work - cancelled >= bits + self.guard_bits // 2:
                with prec.context():
                    return mpc(result)
            work += (bits + self.guard_bits - (work - cancelled)) + 128
        raise GammaEvaluationFailed(
            f"cancellation never stabilized for Gamma({z}) at {bits} bits")


def beta_entry(n: int, t, gamma: SpougeGamma, prec: Precision):
    """Interpolating-basis value beta_n(t).

    The two summands of the definition are complex conjugates for real t, so
    the value is real and computed as -2 Re of the first summand:

        -2 Re[ pi^(-1/4+it/2) (t^2 + 1/4) Gamma(1/4 - it/2) / (4 n^(1/2-it)) ]
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    work = Precision(prec.bits + gamma.guard_bits)
    with work.context():
        tt = mpfr(t)
        i = mpc(0, 1)
        pi = gmpy2.const_pi()
        g = gamma.evaluate(mpc(mpfr(1) / 4, -tt / 2), work)
        pref = gmpy2.exp((mpfr(-1) / 4 + i * tt / 2) * gmpy2.log(pi))
        npow = gmpy2.exp((mpfr(1) / 2 - i * tt) * gmpy2.log(mpfr(n)))
        term = pref * (tt * tt + mpfr(1) / 4) * g / (4 * npow)
        val = -2 * term.real
    with prec.context():
        return mpfr(val)


def beta_matrix(zeros: ZetaZeros, N: int, gamma: SpougeGamma, prec: Precision) -> MatrixBuffer:
    """N x N real matrix a[n][j] = beta_n(gamma_j).

    Column N is filled with beta_n(gamma_N); by column irrelevance its
    values do not affect the signed minors of the full matrix.
    """
    zeros.require(N)
    with prec.context():
        rows = [[beta_entry(n, zeros.gammas[j - 1], gamma, prec)
                 for j in range(1, N + 1)] for n in range(1, N + 1)]
    return MatrixBuffer(N, "real", prec, rows)


def power_matrix(zeros: ZetaZeros, M: int, t, prec: Precision,
                 guard_bits: int = 32) -> MatrixBuffer:
    """(2M+1) x (2M+1) complex matrix of zero-power entries.

    Row n holds n^(-conj(rho_m)), n^(-rho_m) in conjugate pairs for
    m = 1..M (rho_m = 1/2 + i gamma_m) and n^(-1/2-it) in the last column;
    row n = 1 is all ones.  Entries are built from real exp/ln/sin/cos only:
    n^(-1/2-i g) = exp(-ln(n)/2) (cos(g ln n) - i sin(g ln n)).
    """
    zeros.require(M)
    N = 2 * M + 1
    work = Precision(prec.bits + guard_bits)
    rows = []
    with prec.context():
        one = mpc(1)
        rows.append([one for _ in range(N)])
    for n in range(2, N + 1):
        with work.context():
            ln_n = gmpy2.log(mpfr(n))
            r = gmpy2.exp(-ln_n / 2)
            entries = []
            for m in range(M):
                theta = zeros.gammas[m] * ln_n
                c, s = r * gmpy2.cos(theta), r * gmpy2.sin(theta)
                entries.append(mpc(c, s))    # n^(-conj(rho)) = r e^{+i theta}
                entries.append(mpc(c, -s))   # n^(-rho)       = r e^{-i theta}
            theta_t = mpfr(t) * ln_n
            entries.append(mpc(r * gmpy2.cos(theta_t), -r * gmpy2.sin(theta_t)))
        with prec.context():
            rows.append([mpc(x) for x in entries])
    return MatrixBuffer(N, "complex", prec, rows)


def synth_matrix(family: str, n: int, seed: int = 0,
                 prec: Precision = Precision(256)) -> MatrixBuffer:
    """Synthetic test families.

    hilbert:        h[i][j] = 1/(i+j-1), rounded once at prec.
    random_uniform: i.i.d. entries in (-1, 1) with full-precision mantissas
                    from gmpy2's seeded generator (bit-reproducible).
    random_illcond: product of a random_uniform factor with a Hilbert
                    factor, giving rapidly decaying leading determinants.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if family == "hilbert":
        with prec.context():
            rows = [[mpfr(gmpy2.mpq(1, i + j + 1)) for j in range(n)] for i in range(n)]
        return MatrixBuffer(n, "real", prec, rows)
    if family == "random_uniform":
        rs = gmpy2.random_state(seed)
        with prec.context():
            rows = [[2 * gmpy2.mpfr_random(rs) - 1 for _ in range(n)] for _ in range(n)]
        return MatrixBuffer(n, "real", prec, rows)
    if family == "random_illcond":
        R = synth_matrix("random_uniform", n, seed, prec)
        H = synth_matrix("hilbert", n, 0, prec)
        with prec.context():
            rows = []
            for i in range(n):
                row = []
                for j in range(n):
                    acc = R.rows[i][0] * H.rows[0][j]
                    for k in range(1, n):
                        acc = acc + R.rows[i][k] * H.rows[k][j]
                    row.append(acc)
                rows.append(row)
        return MatrixBuffer(n, "real", prec, rows)
    raise ValueError(f"unknown family {family!r}")
