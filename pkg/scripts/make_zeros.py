#!/usr/bin/env python3
"""Regenerate the bundled zeta-zero ordinate data file.

Computes the first K nontrivial zero ordinates with mpmath at a source
precision comfortably above every precision the library is used at, and
writes them in the plain-text format read by detseries.genmat.load_zeros.

This is slow (a fraction of a second per zero at high precision) and only
ever needs to run when extending the bundled file; the library itself never
computes zeros.
"""

import argparse
import pathlib
import sys
import time

import mpmath

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from detseries.genmat import ZetaZeros, save_zeros  # noqa: E402
from detseries.scalars import Precision  # noqa: E402

import gmpy2  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--count", type=int, default=220)
    ap.add_argument("--bits", type=int, default=2048,
                    help="source precision in bits")
    ap.add_argument("--out", default=str(
        pathlib.Path(__file__).resolve().parents[1] / "data" / "zeta_zeros.txt"))
    args = ap.parse_args()

    mpmath.mp.prec = args.bits + 64
    digits = int(args.bits * 0.30103) + 5
    gammas = []
    t0 = time.time()
    with gmpy2.context(precision=args.bits):
        for k in range(1, args.count + 1):
            z = mpmath.zetazero(k)
            gammas.append(gmpy2.mpfr(mpmath.nstr(z.imag, digits, strip_zeros=False)))
            if k % 20 == 0:
                print(f"  {k}/{args.count} zeros ({time.time() - t0:.0f}s)", flush=True)

    zeros = ZetaZeros(gammas, Precision(args.bits).bits)
    pathlib.Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    header = (f"first {args.count} nontrivial zeta zero ordinates\n"
              f"source precision: {args.bits} bits (mpmath zetazero)\n"
              f"regenerate with scripts/make_zeros.py")
    save_zeros(zeros, args.out, header)
    print(f"wrote {args.count} zeros to {args.out}")


if __name__ == "__main__":
    main()
