"""Deterministic message-passing parallel elimination.

Rows are interleaved across T workers (worker ((r-1) mod T) + 1 owns row r);
at step i the owner of row i+1 broadcasts that row, unnormalized, together
with the running determinant, and every worker applies the identical
per-row update (elim.apply_pivot_to_row) to the rows it owns.  A row's final
value depends only on its own history and the broadcast pivot rows, so the
results are bit-identical for every worker count, including T=1.

Two transports realize the broadcast channel: LocalTransport runs the
workers round-robin in-process (still packing and unpacking every message,
so the wire format is always exercised), and ProcessTransport forks one OS
process per worker with the coordinator relaying broadcasts over pipes.
"""

from __future__ import annotations

import multiprocessing as mp
import struct
import zlib
from dataclasses import dataclass, field

import gmpy2
from gmpy2 import mpc, mpfr

from .elim import (EliminationTrace, MinorRow, MinorSeries, _attach_normalized,
                   apply_pivot_to_row, minors_row_from_l)
from .errors import CorruptPayload, WorkerFailure, ZeroPivot
from .matrix import MatrixBuffer
from .scalars import Precision

WIRE_MAGIC = b"MPRW"
WIRE_VERSION = 1
ABORT_MAGIC = b"MPRA"

_SIGN_POS, _SIGN_NEG, _SIGN_PZERO, _SIGN_NZERO = 0, 1, 2, 3


@dataclass(frozen=True)
class WorkerTopology:
    """Row-ownership map for T workers over an n x n elimination."""

    workers: int
    n: int

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("worker count must be >= 1")

    def owner(self, row: int) -> int:
        """1-based owner of 1-based row: interleaved round robin."""
        return ((row - 1) % self.workers) + 1

    def owned_rows(self, worker: int) -> list:
        return list(range(worker, self.n + 1, self.workers))


@dataclass
class CommStats:
    """Broadcast accounting for one parallel elimination."""

    broadcasts: int = 0
    bytes_total: int = 0
    per_step_bytes: list = field(default_factory=list)
    minor_messages: int = 0
    #: deliveries performed by the transport fan-out (broadcasts x T); the
    #: O(log T) hop depth of a tree fan-out is a transport concern and is
    #: reported as this flat count by the provided single-host transports.
    fanout_deliveries: int = 0


def _pack_real(out: bytearray, x):
    if x == 0:
        out.append(_SIGN_NZERO if gmpy2.is_signed(x) else _SIGN_PZERO)
        out += struct.pack("<qI", 0, 0)
        return
    m, e = x.as_mantissa_exp()
    m, e = int(m), int(e)
    sign = _SIGN_NEG if m < 0 else _SIGN_POS
    mag = -m if m < 0 else m
    nlimbs = (mag.bit_length() + 63) // 64
    out.append(sign)
    out += struct.pack("<qI", e, nlimbs)
    out += mag.to_bytes(nlimbs * 8, "little")


def pack_row(step: int, scalars, kind: str) -> bytes:
    """Serialize a sequence of scalars into the versioned wire format.

    Layout: magic 'MPRW', u8 version, u32 step, u32 scalar-record count,
    then per record: sign byte, i64 exponent, u32 limb count, limbs as
    little-endian 64-bit words; finally CRC32 (of everything before it).
    A complex scalar occupies two consecutive records.
    """
    out = bytearray(WIRE_MAGIC)
    records = len(scalars) * (2 if kind == "complex" else 1)
    out += struct.pack("<BII", WIRE_VERSION, step, records)
    for x in scalars:
        if kind == "complex":
            _pack_real(out, x.real)
            _pack_real(out, x.imag)
        else:
            _pack_real(out, x)
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


def _unpack_real(data: bytes, off: int, bits: int):
    sign = data[off]
    e, nlimbs = struct.unpack_from("<qI", data, off + 1)
    off += 13
    if sign in (_SIGN_PZERO, _SIGN_NZERO):
        if nlimbs:
            raise CorruptPayload("zero record with nonzero limb count")
        return (mpfr("-0") if sign == _SIGN_NZERO else mpfr(0)), off
    if sign not in (_SIGN_POS, _SIGN_NEG):
        raise CorruptPayload(f"bad sign byte {sign}")
    if off + nlimbs * 8 > len(data):
        raise CorruptPayload("truncated limb data")
    mag = int.from_bytes(data[off:off + nlimbs * 8], "little")
    off += nlimbs * 8
    if mag.bit_length() > bits:
        raise CorruptPayload("mantissa wider than the declared precision")
    m = gmpy2.mpz(-mag if sign == _SIGN_NEG else mag)
    x = mpfr(m)  # exact: mantissa fits the context precision
    x = gmpy2.mul_2exp(x, e) if e >= 0 else gmpy2.div_2exp(x, -e)
    return x, off


def unpack_row(data: bytes, prec: Precision, kind: str):
    """Inverse of pack_row; returns (step, scalars).  Bit-exact round trip."""
    if len(data) < 17:
        raise CorruptPayload("payload shorter than the fixed header")
    if data[:4] != WIRE_MAGIC:
        raise CorruptPayload(f"bad magic {data[:4]!r}")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != crc:
        raise CorruptPayload("CRC mismatch")
    version, step, records = struct.unpack_from("<BII", data, 4)
    if version != WIRE_VERSION:
        raise CorruptPayload(f"unsupported wire version {version}")
    if kind == "complex" and records % 2:
        raise CorruptPayload("odd record count for complex payload")
    off = 13
    scalars = []
    with prec.context():
        reals = []
        for _ in range(records):
            x, off = _unpack_real(data, off, prec.bits)
            reals.append(x)
        if off != len(data) - 4:
            raise CorruptPayload("trailing bytes after the last record")
        if kind == "complex":
            scalars = [mpc(reals[k], reals[k + 1]) for k in range(0, records, 2)]
        else:
            scalars = reals
    return step, scalars


def pack_abort(step: int, worker: int) -> bytes:
    return ABORT_MAGIC + struct.pack("<II", step, worker)


def is_abort(data: bytes) -> bool:
    return data[:4] == ABORT_MAGIC


def unpack_abort(data: bytes):
    step, worker = struct.unpack_from("<II", data, 4)
    return step, worker


def block_reassign_plan(step: int, n: int, workers: int) -> list:
    """Contiguous-block ownership over the rows still active after ``step``
    completed pivot steps: rows step+1..n split into ``workers`` blocks with
    sizes differing by at most one.  Provided as the shared-memory
    load-balancing alternative; the message-passing executor never uses it
    (it would move whole row blocks between workers).

    Returns [(worker, first_row, last_row)] for non-empty blocks.
    """
    remaining = n - step
    if remaining <= 0:
        return []
    base, extra = divmod(remaining, workers)
    plan = []
    row = step + 1
    for w in range(1, workers + 1):
        size = base + (1 if w <= extra else 0)
        if size == 0:
            break
        plan.append((w, row, row + size - 1))
        row += size
    return plan


def _emit_minor(rows_of_owner, m, i, det, prec):
    """Signed minor row for leading size m = i+2, from the owner's copy of
    row m after step i.  Identical arithmetic to the serial engine."""
    with prec.context():
        return minors_row_from_l(rows_of_owner[m][:i + 1], det)


class _SeriesBuilder:
    """Coordinator-side assembly of trace and minors from broadcast data."""

    def __init__(self, A: MatrixBuffer, collect_minors, series, sink):
        self.A = A
        self.prec = A.prec
        self.kind = A.kind
        self.n = A.n
        self.collect_minors = collect_minors
        self.series = series
        self.trace = EliminationTrace(n=A.n, prec=A.prec)
        self.minors = MinorSeries(A.prec) if collect_minors else None
        self._emit = sink if sink is not None else (
            self.minors.add if self.minors is not None else None)
        self.det = None

    def pivot_step(self, i: int, payload_scalars):
        """Record the step-i broadcast: full row (n scalars) + running det."""
        prow = payload_scalars[:self.n]
        piv = prow[i]
        with self.prec.context():
            self.det = piv if self.det is None else self.det * piv
        self.trace.pivots.append(piv)
        self.trace.det_series.append(self.det)
        self.trace.step = i + 1
        return prow

    def minor_expected(self, i: int) -> bool:
        m = i + 2
        return (self.collect_minors and m <= self.n
                and (self.series or m == self.n))

    def minor_row(self, m: int, signed):
        row = MinorRow(m, signed, None)
        with self.prec.context():
            _attach_normalized(row)
        if self._emit:
            self._emit(row)


def _local_run(A: MatrixBuffer, topo: WorkerTopology, builder: _SeriesBuilder,
               stats: CommStats):
    n, prec, kind = A.n, A.prec, A.kind
    T = topo.workers
    # worker state: rows live only at their owner (shared-nothing by copy)
    wrows = [{r: A.rows[r - 1] for r in topo.owned_rows(w + 1)} for w in range(T)]
    wdet = [None] * T
    for i in range(n):
        ow = topo.owner(i + 1)
        prow_src = wrows[ow - 1][i + 1]
        if prow_src[i] == 0:
            raise ZeroPivot(i + 1, trace=builder.trace, series=builder.minors)
        with prec.context():
            d = wdet[ow - 1]
            det_payload = prow_src[i] if d is None else d * prow_src[i]
        wire = pack_row(i, list(prow_src) + [det_payload], kind)
        stats.broadcasts += 1
        stats.bytes_total += len(wire)
        stats.per_step_bytes.append(len(wire))
        stats.fanout_deliveries += T
        for w in range(T):
            step, scalars = unpack_row(wire, prec, kind)
            prow = scalars[:n]
            with prec.context():
                wdet[w] = prow[i] if wdet[w] is None else wdet[w] * prow[i]
            mine = wrows[w]
            for j in range(i + 2, n + 1):
                if j in mine:
                    with prec.context():
                        apply_pivot_to_row(mine[j], prow, i,
                                           builder.collect_minors)
        builder.pivot_step(i, unpack_row(wire, prec, kind)[1])
        if builder.minor_expected(i):
            m = i + 2
            mo = topo.owner(m)
            signed = _emit_minor(wrows[mo - 1], m, i, wdet[mo - 1], prec)
            mwire = pack_row(m, signed, kind)
            stats.minor_messages += 1
            stats.bytes_total += len(mwire)
            mstep, msignd = unpack_row(mwire, prec, kind)
            builder.minor_row(mstep, msignd)
    # write the owners' final rows back into A (bit-identical to serial)
    for r in range(1, n + 1):
        A.rows[r - 1] = wrows[topo.owner(r) - 1][r]


def _proc_worker(conn, worker_id, n, kind, bits, workers, collect_minors, series):
    try:
        prec = Precision(bits)
        topo = WorkerTopology(workers, n)
        owned = topo.owned_rows(worker_id)
        rows = {}
        for r in owned:
            _, scalars = unpack_row(conn.recv_bytes(), prec, kind)
            rows[r] = scalars
        det = None
        for i in range(n):
            ow = topo.owner(i + 1)
            if ow == worker_id:
                prow = rows[i + 1]
                if prow[i] == 0:
                    conn.send_bytes(pack_abort(i, worker_id))
                    return
                with prec.context():
                    det = prow[i] if det is None else det * prow[i]
                conn.send_bytes(pack_row(i, list(prow) + [det], kind))
            else:
                data = conn.recv_bytes()
                if is_abort(data):
                    return
                _, scalars = unpack_row(data, prec, kind)
                prow = scalars[:n]
                with prec.context():
                    det = prow[i] if det is None else det * prow[i]
            for j in range(i + 2, n + 1):
                if j in rows:
                    with prec.context():
                        apply_pivot_to_row(rows[j], prow, i, collect_minors)
            m = i + 2
            if (collect_minors and m <= n and (series or m == n)
                    and topo.owner(m) == worker_id):
                conn.send_bytes(pack_row(m, _emit_minor(rows, m, i, det, prec), kind))
        for r in owned:
            conn.send_bytes(pack_row(r, rows[r], kind))
    except Exception as exc:  # surfaced as WorkerFailure by the coordinator
        try:
            conn.send_bytes(ABORT_MAGIC + struct.pack("<II", 0xFFFFFFFF, worker_id)
                            + repr(exc).encode())
        finally:
            return


def _proc_recv(conns, procs, w):
    try:
        data = conns[w - 1].recv_bytes()
    except EOFError:
        raise WorkerFailure(w, f"worker {w} exited unexpectedly "
                               f"(exitcode {procs[w - 1].exitcode})")
    if is_abort(data):
        step, worker = unpack_abort(data)
        if step == 0xFFFFFFFF:
            raise WorkerFailure(worker, data[12:].decode(errors="replace"))
        return data
    return data


def _proc_run(A: MatrixBuffer, topo: WorkerTopology, builder: _SeriesBuilder,
              stats: CommStats):
    n, prec, kind = A.n, A.prec, A.kind
    T = topo.workers
    ctx = mp.get_context("fork")
    conns, procs = [], []
    for w in range(1, T + 1):
        master_end, worker_end = ctx.Pipe()
        p = ctx.Process(target=_proc_worker,
                        args=(worker_end, w, n, kind, prec.bits, T,
                              builder.collect_minors, builder.series),
                        daemon=True)
        p.start()
        worker_end.close()
        conns.append(master_end)
        procs.append(p)
    try:
        for r in range(1, n + 1):
            conns[topo.owner(r) - 1].send_bytes(pack_row(r, A.rows[r - 1], kind))
        for i in range(n):
            ow = topo.owner(i + 1)
            data = _proc_recv(conns, procs, ow)
            if is_abort(data):
                step, _ = unpack_abort(data)
                for w in range(1, T + 1):
                    if w != ow:
                        conns[w - 1].send_bytes(data)
                raise ZeroPivot(step + 1, trace=builder.trace,
                                series=builder.minors)
            stats.broadcasts += 1
            stats.bytes_total += len(data)
            stats.per_step_bytes.append(len(data))
            stats.fanout_deliveries += T
            for w in range(1, T + 1):
                if w != ow:
                    conns[w - 1].send_bytes(data)
            _, scalars = unpack_row(data, prec, kind)
            builder.pivot_step(i, scalars)
            if builder.minor_expected(i):
                m = i + 2
                mdata = _proc_recv(conns, procs, topo.owner(m))
                stats.minor_messages += 1
                stats.bytes_total += len(mdata)
                _, signed = unpack_row(mdata, prec, kind)
                builder.minor_row(m, signed)
        for r in range(1, n + 1):
            data = _proc_recv(conns, procs, topo.owner(r))
            _, scalars = unpack_row(data, prec, kind)
            A.rows[r - 1] = scalars
    finally:
        for p in procs:
            p.join(timeout=5)
            if p.is_alive():
                p.terminate()
        for c in conns:
            c.close()


def par_eliminate(A: MatrixBuffer, workers: int, transport: str = "local",
                  collect_minors: bool = True, series: bool = True, sink=None):
    """Parallel elimination of A in place over ``workers`` workers.

    Returns (trace, minor_series, comm_stats); trace and minors are
    bit-identical to elim.eliminate on the same buffer for every worker
    count and both transports.  transport='local' runs the workers
    in-process; transport='process' forks one OS process per worker.
    """
    if transport not in ("local", "process"):
        raise ValueError(f"unknown transport {transport!r}")
    topo = WorkerTopology(workers, A.n)
    builder = _SeriesBuilder(A, collect_minors, series, sink)
    stats = CommStats()
    run = _local_run if transport == "local" else _proc_run
    run(A, topo, builder, stats)
    return builder.trace, builder.minors, stats
