"""Command-line surface: generation, elimination (serial / parallel /
paged), oracle cross-checks, accuracy studies, and benchmarks.

Exit codes (stable, documented):

    0   success
    1   unexpected error
    2   usage / malformed input text (argparse, ParseError)
    3   exact zero pivot (partial results are still written)
    5   matrix exceeds the exact-oracle size cap
    6   zeros file rejected (missing, non-monotone, or too short)
    7   gamma evaluation failed
    8   parallel transport failure (corrupt payload or dead worker)
    9   block store failure (I/O, incomplete grid)
    10  study input mismatch or too few points to fit
    11  verification mismatch (oracle disagrees with the elimination)
    12  precision mismatch between scalars and buffer
    130 interrupted (checkpoint written when configured)
"""

from __future__ import annotations

import argparse
import os
import signal
import sys
import time
from dataclasses import dataclass
from fractions import Fraction

import gmpy2
from gmpy2 import mpfr

from . import blockpager, oracles, parexec
from .elim import EliminationTrace, MinorSeries, eliminate, \
    minors_row_from_l, MinorRow, _attach_normalized
from .errors import (CorruptPayload, DetseriesError, GridIncomplete,
                     InsufficientData, InsufficientZeros, NotMonotone,
                     ParseError, PrecisionMismatch, SeriesMismatch,
                     SizeTooLarge, StorageError, WorkerFailure, ZeroPivot,
                     GammaEvaluationFailed)
from .genmat import SpougeGamma, beta_matrix, load_zeros, power_matrix, synth_matrix
from .matrix import MatrixBuffer
from .precstudy import fit_decay, format_fit, study_matrix, write_csv
from .scalars import Precision, agree_digits, format_scalar, parse_scalar

EXIT_BY_ERROR = [
    (ZeroPivot, 3),
    (SizeTooLarge, 5),
    ((InsufficientZeros, NotMonotone), 6),
    (GammaEvaluationFailed, 7),
    ((CorruptPayload, WorkerFailure), 8),
    ((StorageError, GridIncomplete), 9),
    ((SeriesMismatch, InsufficientData), 10),
    (PrecisionMismatch, 12),
    (ParseError, 2),
]

ORACLE_CHECK_CAP = 8
VERIFY_MIN_DIGITS = 60


@dataclass
class RunConfig:
    """Flattened view of the flags shared by the elimination commands."""

    command: str
    prec_bits: int = 256
    workers: int = 0
    block_size: int = 0
    paging_dir: str | None = None
    pivot_mode: str = "none"
    input: str | None = None
    output: str | None = None
    seed: int = 0
    oracle_check: bool = False
    digits: int | None = None
    limit_n: int | None = None
    checkpoint_dir: str | None = None
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.pivot_mode == "partial" and self.command == "minors":
            raise ParseError(
                "pivot_mode=partial cannot be combined with minors output")


def _fmt(x, digits):
    return format_scalar(x, digits)


# ---- checkpointing ----------------------------------------------------------

class _Checkpointer:
    """Whole-run snapshots for in-memory eliminations.

    A checkpoint directory holds the mid-elimination buffer (matrix.mpmat;
    the dead lower slots carry the triangular factor) and state.txt with the
    completed-step count and the pivots so far.  Resuming re-derives the
    determinant series and already-final minor rows from those, bit-exactly,
    then continues stepping.
    """

    def __init__(self, directory, every):
        self.dir = directory
        self.every = every
        self.stop_requested = False
        os.makedirs(directory, exist_ok=True)

    def write(self, A: MatrixBuffer, trace: EliminationTrace):
        tmp_m = os.path.join(self.dir, "matrix.mpmat.tmp")
        tmp_s = os.path.join(self.dir, "state.txt.tmp")
        A.save(tmp_m)
        with open(tmp_s, "w") as f:
            f.write(f"step {trace.step}\n")
            for p in trace.pivots:
                f.write("pivot " + format_scalar(p) + "\n")
        os.replace(tmp_m, os.path.join(self.dir, "matrix.mpmat"))
        os.replace(tmp_s, os.path.join(self.dir, "state.txt"))

    def hook(self, completed, A, trace):
        if self.every and completed % self.every == 0:
            self.write(A, trace)
        if self.stop_requested:
            self.write(A, trace)
            return True
        return False

    def resumable(self):
        return os.path.exists(os.path.join(self.dir, "state.txt"))

    def load(self):
        A = MatrixBuffer.load(os.path.join(self.dir, "matrix.mpmat"))
        trace = EliminationTrace(n=A.n, prec=A.prec)
        with open(os.path.join(self.dir, "state.txt")) as f:
            header = f.readline().split()
            if len(header) != 2 or header[0] != "step":
                raise ParseError("corrupt checkpoint state file")
            step = int(header[1])
            with A.prec.context():
                det = None
                for line in f:
                    if not line.startswith("pivot "):
                        raise ParseError("corrupt checkpoint state file")
                    p = parse_scalar(line[6:], A.prec, A.kind)
                    trace.pivots.append(p)
                    det = p if det is None else det * p
                    trace.det_series.append(det)
        if len(trace.pivots) != step:
            raise ParseError("checkpoint pivot count does not match step")
        trace.step = step
        return A, trace, step

    def replay_minors(self, A, trace, collect, series_flag, emit):
        """Re-emit minor rows already final in a checkpointed buffer."""
        if not collect:
            return
        with A.prec.context():
            for m in range(2, trace.step + 2):
                if m > A.n or (not series_flag and m != A.n):
                    continue
                if m - 1 > trace.step:
                    continue
                signed = minors_row_from_l(A.rows[m - 1][:m - 1],
                                           trace.det_series[m - 2])
                row = MinorRow(m, signed, None)
                _attach_normalized(row)
                emit(row)


# ---- elimination dispatch ---------------------------------------------------

def _run_elimination(A: MatrixBuffer, cfg: RunConfig, collect_minors: bool):
    """Serial / parallel / paged elimination per the config.  Returns
    (trace, minors_or_None, original_copy)."""
    original = A.copy()
    if cfg.block_size:
        directory = cfg.paging_dir or (cfg.output or "run") + ".blocks"
        if os.path.exists(os.path.join(directory, blockpager.META_NAME)):
            store = blockpager.BlockStore.open(directory)
        else:
            store = blockpager.BlockStore.create(directory, A, cfg.block_size)
        trace, minors = blockpager.paged_eliminate(
            store, collect_minors=collect_minors)
        return trace, minors, original
    if cfg.workers:
        trace, minors, _ = parexec.par_eliminate(
            A, cfg.workers, transport="process",
            collect_minors=collect_minors)
        return trace, minors, original
    ck = None
    if cfg.checkpoint_dir:
        ck = _Checkpointer(cfg.checkpoint_dir, cfg.checkpoint_every)

        def _on_signal(signum, frame):
            ck.stop_requested = True
        signal.signal(signal.SIGINT, _on_signal)
        signal.signal(signal.SIGTERM, _on_signal)
    minors_out = MinorSeries(A.prec) if collect_minors else None
    emit = minors_out.add if minors_out is not None else None
    if ck is not None and ck.resumable():
        A, trace, step = ck.load()
        ck.replay_minors(A, trace, collect_minors, True, emit)
        trace, _ = eliminate(A, collect_minors=collect_minors, sink=emit,
                             trace=trace, start_step=step,
                             step_hook=ck.hook)
    else:
        trace, _ = eliminate(A, collect_minors=collect_minors, sink=emit,
                             pivot_mode=cfg.pivot_mode,
                             step_hook=ck.hook if ck else None)
    if ck is not None and ck.stop_requested:
        print(f"interrupted at step {trace.step}; checkpoint in {ck.dir}",
              file=sys.stderr)
        sys.exit(130)
    return trace, minors_out, original


def _write_dets(trace: EliminationTrace, path, digits):
    with open(path, "w") as f:
        for i, d in enumerate(trace.det_series, 1):
            f.write(f"{i} {_fmt(d, digits)}\n")


def _write_minors(minors: MinorSeries, outdir, digits):
    os.makedirs(outdir, exist_ok=True)
    for m in minors.sizes():
        row = minors.rows[m]
        with open(os.path.join(outdir, f"minors_{m}.txt"), "w") as f:
            for k in range(m):
                norm = ("undefined" if row.normalized is None
                        else _fmt(row.normalized[k], digits))
                f.write(f"{k + 1} {_fmt(row.signed[k], digits)} {norm}\n")


def _oracle_crosscheck(original: MatrixBuffer, trace, minors):
    """Exact-oracle check of leading sizes up to the cap; raises on mismatch."""
    if original.kind != "real":
        raise SizeTooLarge("exact oracle covers real matrices only")
    cap = min(original.n, ORACLE_CHECK_CAP)
    R = oracles.RationalMatrix.from_buffer(
        MatrixBuffer(cap, "real", original.prec,
                     [r[:cap] for r in original.rows[:cap]]))
    for m in range(1, cap + 1):
        lead = R.leading(m)
        exact_det = oracles.det_cofactor(lead)
        got = trace.det(m)
        if _exact_mismatch(got, exact_det, original.prec):
            raise SeriesMismatch(
                f"determinant mismatch vs exact oracle at leading size {m}")
        if minors is not None and m >= 2:
            exact_cof = oracles.cofactors_of_column(lead, m)
            for k in range(m):
                if _exact_mismatch(minors.rows[m].signed[k], exact_cof[k],
                                   original.prec):
                    raise SeriesMismatch(
                        f"minor mismatch vs exact oracle at n={m}, k={k + 1}")


def _exact_mismatch(approx, exact: Fraction, prec: Precision, digits=50):
    """True when the float result disagrees with the exact rational by more
    than roundoff (well under `digits` matching digits)."""
    with gmpy2.context(precision=prec.bits + 64):
        ref = mpfr(gmpy2.mpq(exact.numerator, exact.denominator))
        if ref == 0:
            return abs(approx) > 2 ** (-(prec.bits // 2))
        return agree_digits(approx, ref) < min(digits, prec.decimal_digits - 10)


# ---- commands ---------------------------------------------------------------

def cmd_gen(args):
    prec = Precision(args.prec_bits)
    if args.family in ("hilbert", "random_uniform", "random_illcond"):
        if not args.n:
            raise ParseError(f"--n is required for family {args.family}")
        A = synth_matrix(args.family, args.n, args.seed, prec)
    elif args.family == "beta":
        if not args.zeros or not args.n:
            raise ParseError("beta needs --zeros and --n")
        zeros = load_zeros(args.zeros, prec, args.n)
        A = beta_matrix(zeros, args.n, SpougeGamma(), prec)
    elif args.family == "power":
        if not args.zeros or not args.m:
            raise ParseError("power needs --zeros and --m")
        zeros = load_zeros(args.zeros, prec, args.m)
        with prec.context():
            t = mpfr(args.t)
        A = power_matrix(zeros, args.m, t, prec)
    else:
        raise ParseError(f"unknown family {args.family}")
    A.save(args.out)
    print(f"wrote {A.kind} {A.n}x{A.n} matrix at {prec.bits} bits to {args.out}")
    return 0


def _load_input(args) -> MatrixBuffer:
    A = MatrixBuffer.load(args.input)
    if getattr(args, "limit_n", None):
        if args.limit_n < A.n:
            A = MatrixBuffer(args.limit_n, A.kind, A.prec,
                             [row[:args.limit_n] for row in A.rows[:args.limit_n]])
    return A


def _config_from(args, command) -> RunConfig:
    return RunConfig(
        command=command,
        prec_bits=getattr(args, "prec_bits", 256),
        workers=getattr(args, "workers", 0),
        block_size=getattr(args, "block_size", 0),
        paging_dir=getattr(args, "paging_dir", None),
        pivot_mode=getattr(args, "pivot_mode", "none"),
        input=args.input,
        output=getattr(args, "out", None),
        oracle_check=getattr(args, "oracle", False),
        digits=getattr(args, "digits", None),
        limit_n=getattr(args, "limit_n", None),
        checkpoint_dir=getattr(args, "checkpoint_dir", None),
        checkpoint_every=getattr(args, "checkpoint_every", 0),
    )


def cmd_det(args):
    A = _load_input(args)
    cfg = _config_from(args, "det")
    digits = cfg.digits or A.prec.decimal_digits
    trace, _, original = _run_elimination(A, cfg, collect_minors=False)
    outdir = args.out or "."
    os.makedirs(outdir, exist_ok=True)
    _write_dets(trace, os.path.join(outdir, "dets.txt"), digits)
    if cfg.oracle_check:
        _oracle_crosscheck(original, trace, None)
        print("oracle check passed")
    print(f"wrote determinant series for n=1..{trace.step} to "
          f"{os.path.join(outdir, 'dets.txt')}")
    return 0


def cmd_minors(args):
    A = _load_input(args)
    cfg = _config_from(args, "minors")
    digits = cfg.digits or A.prec.decimal_digits
    outdir = args.out or "."
    try:
        trace, minors, original = _run_elimination(A, cfg, collect_minors=True)
    except ZeroPivot as exc:
        if exc.trace is not None:
            os.makedirs(outdir, exist_ok=True)
            _write_dets(exc.trace, os.path.join(outdir, "dets.txt"), digits)
            if exc.series is not None:
                _write_minors(exc.series, outdir, digits)
        print(f"zero pivot at step {exc.step}; partial series written",
              file=sys.stderr)
        raise
    os.makedirs(outdir, exist_ok=True)
    _write_dets(trace, os.path.join(outdir, "dets.txt"), digits)
    _write_minors(minors, outdir, digits)
    undefined = [m for m in minors.sizes() if minors.rows[m].normalized is None]
    if undefined:
        print("normalization undefined (leading minor zero) for n in "
              f"{undefined}; signed minors still written", file=sys.stderr)
    if cfg.oracle_check:
        _oracle_crosscheck(original, trace, minors)
        print("oracle check passed")
    print(f"wrote dets.txt and minors_<n>.txt for n=2..{trace.step} to {outdir}")
    return 0


def cmd_study(args):
    A = MatrixBuffer.load(args.input)
    p_lo, p_hi = Precision(args.prec_lo), Precision(args.prec_hi)
    if A.prec.bits < p_hi.bits:
        raise SeriesMismatch(
            f"input ingested at {A.prec.bits} bits; study needs >= {p_hi.bits}")
    series = study_matrix(A, p_lo, p_hi, limit_n=args.limit_n)
    outdir = args.out or "."
    os.makedirs(outdir, exist_ok=True)
    write_csv(series, os.path.join(outdir, "agreement.csv"))
    n_max = args.n_max or (args.limit_n or A.n)
    fit = fit_decay(series, args.n_min, n_max)
    with open(os.path.join(outdir, "fit.txt"), "w") as f:
        f.write(format_fit(fit) + "\n")
    print(format_fit(fit))
    return 0


def cmd_bench(args):
    sizes = [int(s) for s in args.sizes.split(",")]
    precisions = [int(p) for p in args.precisions.split(",")]
    workers = [int(w) for w in args.workers.split(",")]
    rows = []
    for n in sizes:
        for p in precisions:
            A0 = synth_matrix("random_uniform", n, args.seed, Precision(p))
            for T in workers:
                A = A0.copy()
                t0 = time.perf_counter()
                if T <= 1:
                    eliminate(A, collect_minors=False)
                else:
                    parexec.par_eliminate(A, T, transport="process",
                                          collect_minors=False)
                rows.append((n, p, T, time.perf_counter() - t0))
    print(f"{'n':>6} {'prec':>7} {'T':>3} {'seconds':>10}")
    for n, p, T, dt in rows:
        print(f"{n:>6} {p:>7} {T:>3} {dt:>10.3f}")
    by = {(n, p, T): dt for n, p, T, dt in rows}

    def ratio(label, a, b):
        if a in by and b in by and by[a] > 0:
            print(f"{label}: {by[b] / by[a]:.2f}")
    for p in precisions:
        for T in workers:
            for n in sizes:
                if 2 * n in sizes:
                    ratio(f"time(n={2 * n})/time(n={n}) @p={p},T={T}",
                          (n, p, T), (2 * n, p, T))
    for n in sizes:
        for T in workers:
            for p in precisions:
                if 2 * p in precisions:
                    ratio(f"time(p={2 * p})/time(p={p}) @n={n},T={T}",
                          (n, p, T), (n, 2 * p, T))
    for n in sizes:
        for p in precisions:
            for T in workers:
                if T > 1 and 1 in workers:
                    a, b = by.get((n, p, 1)), by.get((n, p, T))
                    if a and b and b > 0:
                        print(f"speedup T=1->{T} @n={n},p={p}: {a / b:.2f}")
    return 0


def cmd_verify(args):
    A = MatrixBuffer.load(args.input)
    if A.kind != "real":
        raise SizeTooLarge("verify requires a real matrix (exact oracle)")
    if A.n > oracles.ORACLE_SIZE_CAP:
        raise SizeTooLarge(
            f"verify capped at n={oracles.ORACLE_SIZE_CAP}, got {A.n}")
    R = oracles.RationalMatrix.from_buffer(A)
    work = A.copy()
    try:
        trace, minors = eliminate(work)
    except ZeroPivot as exc:
        print(f"elimination hit an exact zero pivot at step {exc.step}; "
              "verifying the completed prefix", file=sys.stderr)
        trace, minors = exc.trace, exc.series
    worst = None
    for m in range(1, trace.step + 1):
        lead = R.leading(m)
        exact = oracles.det_cofactor(lead)
        cond_f = oracles.det_condensation(lead, "factor")
        cond_d = oracles.det_condensation(lead, "divide")
        if cond_f != exact or cond_d != exact:
            print(f"n={m}: condensation oracles disagree with cofactor oracle")
            return 11
        d = _agree_exact(trace.det(m), exact, A.prec)
        worst = d if worst is None else min(worst, d)
        if minors is not None and m >= 2 and m in minors.rows:
            cof = oracles.cofactors_of_column(lead, m)
            for k in range(m):
                d = _agree_exact(minors.rows[m].signed[k], cof[k], A.prec)
                worst = min(worst, d)
    threshold = min(args.min_digits, A.prec.decimal_digits - 10)
    print(f"verified n=1..{trace.step}: worst agreement {worst} digits "
          f"(threshold {threshold})")
    return 0 if worst >= threshold else 11


def _agree_exact(approx, exact: Fraction, prec: Precision) -> int:
    with gmpy2.context(precision=prec.bits + 64):
        ref = mpfr(gmpy2.mpq(exact.numerator, exact.denominator))
        if ref == 0:
            return (prec.decimal_digits if abs(approx) < 2 ** (-(prec.bits // 2))
                    else 0)
        return agree_digits(approx, ref)


# ---- argument parsing -------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(
        prog="detseries",
        description="determinant and signed-minor series of leading "
                    "submatrices at arbitrary precision")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a matrix file")
    g.add_argument("family",
                   choices=["hilbert", "random_uniform", "random_illcond",
                            "beta", "power"])
    g.add_argument("--n", type=int, default=0)
    g.add_argument("--m", type=int, default=0, help="zero pairs (power)")
    g.add_argument("--t", default="0", help="parametric column value")
    g.add_argument("--zeros", help="zeros data file")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--prec-bits", type=int, default=256)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    def elim_flags(p, minors_mode):
        p.add_argument("input", help="MPMAT matrix file")
        p.add_argument("--out", help="output directory (default: cwd)")
        p.add_argument("--workers", type=int, default=0,
                       help="parallel worker processes (0 = serial)")
        p.add_argument("--block-size", type=int, default=0,
                       help="paged mode block dimension (0 = in-memory)")
        p.add_argument("--paging-dir", help="block store directory")
        p.add_argument("--oracle", action="store_true",
                       help=f"cross-check leading sizes <= {ORACLE_CHECK_CAP} "
                            "against the exact oracle")
        p.add_argument("--digits", type=int, help="output decimal digits")
        p.add_argument("--limit-n", type=int,
                       help="stop the series at this leading size")
        p.add_argument("--checkpoint-dir")
        p.add_argument("--checkpoint-every", type=int, default=0,
                       help="steps between snapshots (with --checkpoint-dir)")
        if not minors_mode:
            p.add_argument("--pivot-mode", choices=["none", "partial"],
                           default="none")

    d = sub.add_parser("det", help="determinant series of all leading sizes")
    elim_flags(d, minors_mode=False)
    d.set_defaults(func=cmd_det)

    m = sub.add_parser("minors", help="determinants plus signed/normalized "
                                      "minor series")
    elim_flags(m, minors_mode=True)
    m.set_defaults(func=cmd_minors)

    s = sub.add_parser("study", help="two-precision accuracy-loss study")
    s.add_argument("input", help="MPMAT matrix at >= the high precision")
    s.add_argument("--prec-lo", type=int, required=True)
    s.add_argument("--prec-hi", type=int, required=True)
    s.add_argument("--n-min", type=int, default=10)
    s.add_argument("--n-max", type=int, default=0)
    s.add_argument("--limit-n", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_study)

    b = sub.add_parser("bench", help="wall-time scaling table")
    b.add_argument("--sizes", default="64,128")
    b.add_argument("--precisions", default="1024")
    b.add_argument("--workers", default="1")
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("verify", help="cross-check a small matrix against "
                                      "the exact oracles")
    v.add_argument("input")
    v.add_argument("--min-digits", type=int, default=VERIFY_MIN_DIGITS)
    v.set_defaults(func=cmd_verify)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DetseriesError as exc:
        for klass, code in EXIT_BY_ERROR:
            if isinstance(exc, klass):
                print(f"error: {exc}", file=sys.stderr)
                return code
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
