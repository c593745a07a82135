"""Out-of-core elimination over a disk-resident block grid.

The N x N matrix is split into B x B blocks of size N_b (N = B*N_b) stored
one file per block; the triangular factor L lives in its own block grid
(paged mode trades the in-place trick for 3/2 N^2 space).  At most four
blocks are resident at any moment, enforced by the store's residency probe.

Per pivot stage s the schedule runs, in order:

  FACTOR(s)          A(s,s)+L(s,s)       in-block elimination; the raw
                                         multipliers z are frozen into the
                                         dead below-diagonal slots of A(s,s)
  ROWPANEL(s,t>s)    A(s,s)+A(s,t)       pivot-row panel update
  COLFACTOR(r>s,s)   A(s,s)+L(s,s)+A(r,s)+L(r,s)   (the 4-resident op)
  TRAIL(r>s,t>s)     A(r,s)+A(s,t)+A(r,t)
  LSELF(s,u<s)       A(s,s)+L(s,u)       finalize L rows of block-row s
  LTRAIL(r>s,u<s)    A(r,s)+L(s,u)+L(r,u)
  EMIT(s)            pivots + minors of rows in block-row s -> sidecar file

Every scalar operation replays the exact rounding sequence of the
in-memory engine, so determinants and minors are bit-identical to
elim.eliminate.  Completed operations are journaled (write temps, append
the journal line, rename), making any mid-run kill recoverable: replay
finishes half-committed renames, deletes orphaned temps, and skips
journaled operations.
"""

from __future__ import annotations

import os
import zlib

import gmpy2
from gmpy2 import mpc, mpfr

from .elim import EliminationTrace, MinorRow, MinorSeries, _attach_normalized, \
    minors_row_from_l
from .errors import GridIncomplete, ParseError, StorageError, ZeroPivot
from .matrix import MatrixBuffer
from .scalars import Precision, format_scalar, parse_scalar

BLOCK_MAGIC = "MPBLK"
BLOCK_VERSION = 1
META_NAME = "meta.txt"
JOURNAL_NAME = "journal.txt"
MAX_RESIDENT = 4


class BlockStore:
    """Directory of MPBLK block files with a 4-block residency budget.

    Grid 'a' holds the matrix (upper part becomes the echelon form, the dead
    strictly-lower slots freeze the raw elimination multipliers); grid 'l'
    holds the unit-lower-triangular factor rows used for minors emission.
    """

    def __init__(self, directory, B: int, N_b: int, kind: str, prec: Precision):
        self.dir = directory
        self.B = B
        self.N_b = N_b
        self.kind = kind
        self.prec = prec
        self.resident: dict = {}
        self.max_resident = 0

    # ---- creation / opening -------------------------------------------------

    @classmethod
    def create(cls, directory, A: MatrixBuffer, N_b: int) -> "BlockStore":
        if A.n % N_b:
            raise ValueError(f"matrix size {A.n} is not a multiple of block size {N_b}")
        B = A.n // N_b
        os.makedirs(directory, exist_ok=True)
        store = cls(directory, B, N_b, A.kind, A.prec)
        store._write_meta()
        with A.prec.context():
            zero = mpc(0) if A.kind == "complex" else mpfr(0)
        for i in range(B):
            for j in range(B):
                rows = [r[j * N_b:(j + 1) * N_b]
                        for r in A.rows[i * N_b:(i + 1) * N_b]]
                store._write_block_file(store._path("a", i, j), "a", i, j, rows)
                zrows = [[zero for _ in range(N_b)] for _ in range(N_b)]
                store._write_block_file(store._path("l", i, j), "l", i, j, zrows)
        return store

    @classmethod
    def open(cls, directory) -> "BlockStore":
        meta = os.path.join(directory, META_NAME)
        try:
            with open(meta) as f:
                tokens = f.read().split()
        except OSError as exc:
            raise StorageError(f"cannot read {meta}: {exc}")
        if len(tokens) != 5 or tokens[0] != "MPBLKSTORE1":
            raise StorageError(f"{meta}: not a block store")
        B, N_b, bits, kind = int(tokens[1]), int(tokens[2]), int(tokens[3]), tokens[4]
        return cls(directory, B, N_b, kind, Precision(bits))

    def _write_meta(self):
        with open(os.path.join(self.dir, META_NAME), "w") as f:
            f.write(f"MPBLKSTORE1 {self.B} {self.N_b} {self.prec.bits} {self.kind}\n")

    @property
    def n(self) -> int:
        return self.B * self.N_b

    # ---- file layout --------------------------------------------------------

    def _fname(self, grid, i, j):
        return f"{'blk' if grid == 'a' else 'lblk'}_{i}_{j}.mpb"

    def _path(self, grid, i, j):
        return os.path.join(self.dir, self._fname(grid, i, j))

    def _encode_block(self, grid, i, j, rows) -> bytes:
        lines = [f"{BLOCK_MAGIC} {BLOCK_VERSION} {i} {j} {self.N_b} "
                 f"{self.prec.bits} {self.kind}"]
        for row in rows:
            for x in row:
                lines.append(format_scalar(x))
        return ("\n".join(lines) + "\n").encode()

    def _write_block_file(self, path, grid, i, j, rows) -> int:
        data = self._encode_block(grid, i, j, rows)
        with open(path, "wb") as f:
            f.write(data)
        return zlib.crc32(data)

    # ---- residency-tracked access -------------------------------------------

    def acquire(self, grid, i, j):
        """Load a block into memory; counts against the 4-block budget."""
        key = (grid, i, j)
        if key in self.resident:
            raise StorageError(f"block already resident", block=key)
        if len(self.resident) >= MAX_RESIDENT:
            raise StorageError(
                f"residency budget exceeded loading {key}", block=key)
        path = self._path(grid, i, j)
        try:
            with open(path) as f:
                header = f.readline().split()
                if (len(header) != 7 or header[0] != BLOCK_MAGIC
                        or int(header[1]) != BLOCK_VERSION):
                    raise StorageError(f"{path}: bad block header", block=key)
                if (int(header[2]), int(header[3])) != (i, j) \
                        or int(header[4]) != self.N_b \
                        or int(header[5]) != self.prec.bits \
                        or header[6] != self.kind:
                    raise StorageError(f"{path}: header does not match store",
                                       block=key)
                rows = []
                for _ in range(self.N_b):
                    row = []
                    for _ in range(self.N_b):
                        line = f.readline()
                        if not line:
                            raise StorageError(f"{path}: truncated block",
                                               block=key)
                        row.append(parse_scalar(line, self.prec, self.kind))
                    rows.append(row)
        except OSError as exc:
            raise StorageError(f"cannot read block {key}: {exc}", block=key)
        except ParseError as exc:
            raise StorageError(f"corrupt block {key}: {exc}", block=key)
        self.resident[key] = rows
        self.max_resident = max(self.max_resident, len(self.resident))
        return rows

    def release(self, grid, i, j):
        del self.resident[(grid, i, j)]

    def release_all(self):
        self.resident.clear()

    # ---- two-phase commit ---------------------------------------------------

    def temp_path(self, op_id, grid, i, j):
        stage, kind, a, b = op_id
        return os.path.join(
            self.dir, f"tmp_{stage}_{kind}_{a}_{b}__{self._fname(grid, i, j)}")

    def write_temp(self, op_id, grid, i, j, rows) -> int:
        data = self._encode_block(grid, i, j, rows)
        with open(self.temp_path(op_id, grid, i, j), "wb") as f:
            f.write(data)
        return zlib.crc32(data)

    def commit_temp(self, op_id, grid, i, j):
        os.replace(self.temp_path(op_id, grid, i, j), self._path(grid, i, j))

    # ---- journal ------------------------------------------------------------

    def journal_path(self):
        return os.path.join(self.dir, JOURNAL_NAME)

    def journal_append(self, op_id, crc):
        stage, kind, i, j = op_id
        with open(self.journal_path(), "a") as f:
            f.write(f"done {stage} {kind} {i} {j} {crc}\n")
            f.flush()
            os.fsync(f.fileno())

    def journal_done(self) -> set:
        done = set()
        path = self.journal_path()
        if not os.path.exists(path):
            return done
        with open(path) as f:
            for line in f:
                tokens = line.split()
                if len(tokens) == 6 and tokens[0] == "done":
                    done.add((int(tokens[1]), tokens[2],
                              int(tokens[3]), int(tokens[4])))
        return done

    def sidecar_path(self, stage):
        return os.path.join(self.dir, f"emit_{stage}.txt")


# ---- schedule ---------------------------------------------------------------

def build_schedule(B: int) -> list:
    """Deterministic operation list; op id = (stage, kind, i, j)."""
    ops = []
    for s in range(B):
        ops.append((s, "FACTOR", s, s))
        for t in range(s + 1, B):
            ops.append((s, "ROWPANEL", s, t))
        for r in range(s + 1, B):
            ops.append((s, "COLFACTOR", r, s))
            for t in range(s + 1, B):
                ops.append((s, "TRAIL", r, t))
        for u in range(s):
            ops.append((s, "LSELF", s, u))
        for r in range(s + 1, B):
            for u in range(s):
                ops.append((s, "LTRAIL", r, u))
        ops.append((s, "EMIT", s, s))
    return ops


def _op_files(store: BlockStore, op_id):
    stage, kind, i, j = op_id
    if kind == "FACTOR":
        return [("a", i, j), ("l", i, j)]
    if kind == "ROWPANEL":
        return [("a", i, j)]
    if kind == "COLFACTOR":
        return [("a", i, j), ("l", i, j)]
    if kind == "TRAIL":
        return [("a", i, j)]
    if kind in ("LSELF", "LTRAIL"):
        return [("l", i, j)]
    return []  # EMIT writes its sidecar directly


def recover(store: BlockStore):
    """Crash recovery: finish renames for journaled ops, drop orphan temps."""
    done = store.journal_done()
    for op_id in build_schedule(store.B):
        for grid, i, j in _op_files(store, op_id):
            tmp = store.temp_path(op_id, grid, i, j)
            if os.path.exists(tmp):
                if op_id in done:
                    os.replace(tmp, store._path(grid, i, j))
                else:
                    os.remove(tmp)
    # orphan temps from sidecars
    for name in os.listdir(store.dir):
        if name.startswith("tmp_"):
            os.remove(os.path.join(store.dir, name))


# ---- block operations -------------------------------------------------------

def _commit(store, op_id, written):
    """written: list of (grid, i, j, crc).  Journal then rename (two-phase)."""
    combined = 0
    for _, _, _, crc in written:
        combined = zlib.crc32(crc.to_bytes(4, "little"), combined)
    store.journal_append(op_id, combined)
    for grid, i, j, _ in written:
        store.commit_temp(op_id, grid, i, j)


def _op_factor(store, op_id):
    s = op_id[0]
    nb = store.N_b
    a = store.acquire("a", s, s)
    l = store.acquire("l", s, s)
    try:
        with store.prec.context():
            for i in range(nb):
                piv = a[i][i]
                if piv == 0:
                    raise ZeroPivot(s * nb + i + 1)
                for j in range(i + 1, nb):
                    z = a[j][i] / piv
                    for k in range(i):
                        l[j][k] = l[j][k] - z * l[i][k]
                    for k in range(i + 1, nb):
                        a[j][k] = a[j][k] - z * a[i][k]
                    a[j][i] = z       # frozen raw multiplier (dead slot)
                    l[j][i] = -z
        written = [("a", s, s, store.write_temp(op_id, "a", s, s, a)),
                   ("l", s, s, store.write_temp(op_id, "l", s, s, l))]
        _commit(store, op_id, written)
    finally:
        store.release_all()


def _op_rowpanel(store, op_id):
    s, _, _, t = op_id
    nb = store.N_b
    a_ss = store.acquire("a", s, s)
    a_st = store.acquire("a", s, t)
    try:
        with store.prec.context():
            for i in range(nb):
                for j in range(i + 1, nb):
                    z = a_ss[j][i]
                    for k in range(nb):
                        a_st[j][k] = a_st[j][k] - z * a_st[i][k]
        _commit(store, op_id,
                [("a", s, t, store.write_temp(op_id, "a", s, t, a_st))])
    finally:
        store.release_all()


def _op_colfactor(store, op_id):
    s, _, r, _ = op_id
    nb = store.N_b
    a_ss = store.acquire("a", s, s)
    l_ss = store.acquire("l", s, s)
    a_rs = store.acquire("a", r, s)
    l_rs = store.acquire("l", r, s)
    try:
        with store.prec.context():
            for i in range(nb):
                piv = a_ss[i][i]
                for j in range(nb):
                    z = a_rs[j][i] / piv
                    for k in range(i):
                        l_rs[j][k] = l_rs[j][k] - z * l_ss[i][k]
                    for k in range(i + 1, nb):
                        a_rs[j][k] = a_rs[j][k] - z * a_ss[i][k]
                    a_rs[j][i] = z
                    l_rs[j][i] = -z
        written = [("a", r, s, store.write_temp(op_id, "a", r, s, a_rs)),
                   ("l", r, s, store.write_temp(op_id, "l", r, s, l_rs))]
        _commit(store, op_id, written)
    finally:
        store.release_all()


def _op_trail(store, op_id):
    s, _, r, t = op_id
    nb = store.N_b
    a_rs = store.acquire("a", r, s)
    a_st = store.acquire("a", s, t)
    a_rt = store.acquire("a", r, t)
    try:
        with store.prec.context():
            for i in range(nb):
                for j in range(nb):
                    z = a_rs[j][i]
                    for k in range(nb):
                        a_rt[j][k] = a_rt[j][k] - z * a_st[i][k]
        _commit(store, op_id,
                [("a", r, t, store.write_temp(op_id, "a", r, t, a_rt))])
    finally:
        store.release_all()


def _op_lself(store, op_id):
    s, _, _, u = op_id
    nb = store.N_b
    a_ss = store.acquire("a", s, s)
    l_su = store.acquire("l", s, u)
    try:
        with store.prec.context():
            for i in range(nb):
                for j in range(i + 1, nb):
                    z = a_ss[j][i]
                    for k in range(nb):
                        l_su[j][k] = l_su[j][k] - z * l_su[i][k]
        _commit(store, op_id,
                [("l", s, u, store.write_temp(op_id, "l", s, u, l_su))])
    finally:
        store.release_all()


def _op_ltrail(store, op_id):
    s, _, r, u = op_id
    nb = store.N_b
    a_rs = store.acquire("a", r, s)
    l_su = store.acquire("l", s, u)
    l_ru = store.acquire("l", r, u)
    try:
        with store.prec.context():
            for i in range(nb):
                for j in range(nb):
                    z = a_rs[j][i]
                    for k in range(nb):
                        l_ru[j][k] = l_ru[j][k] - z * l_su[i][k]
        _commit(store, op_id,
                [("l", r, u, store.write_temp(op_id, "l", r, u, l_ru))])
    finally:
        store.release_all()


def _op_emit(store, op_id, collect_minors, series):
    """Write the stage sidecar: pivots of block-row s and the signed minor
    rows of every leading size finalized in this stage."""
    s = op_id[0]
    nb, n = store.N_b, store.n
    a_ss = store.acquire("a", s, s)
    pivots = [a_ss[i][i] for i in range(nb)]
    store.release("a", s, s)

    det_prev = _det_before_stage(store, s)
    lines = [f"EMITSC1 {s} {nb}"]
    for p in pivots:
        lines.append("P " + format_scalar(p))
    with store.prec.context():
        det = det_prev
        for i in range(nb):
            g = s * nb + i              # 0-based global pivot/row index
            m = g + 1                   # leading size finalized by this row
            if collect_minors and m >= 2 and (series or m == n):
                prefix = []
                for u in range(s):
                    l_su = store.acquire("l", s, u)
                    prefix.extend(l_su[i])
                    store.release("l", s, u)
                l_ss = store.acquire("l", s, s)
                prefix.extend(l_ss[i][:i])
                store.release("l", s, s)
                signed = minors_row_from_l(prefix, det)
                lines.append(f"M {m}")
                for x in signed:
                    lines.append(format_scalar(x))
            det = pivots[i] if det is None else det * pivots[i]
    data = ("\n".join(lines) + "\n").encode()
    tmp = store.sidecar_path(s) + ".tmp"
    with open(tmp, "w") as f:
        f.write(data.decode())
    store.journal_append(op_id, zlib.crc32(data))
    os.replace(tmp, store.sidecar_path(s))


def _read_sidecar(store, s):
    """Returns (pivots, [(m, signed_row)]) from the stage-s sidecar."""
    path = store.sidecar_path(s)
    try:
        with open(path) as f:
            header = f.readline().split()
            if len(header) != 3 or header[0] != "EMITSC1" or int(header[1]) != s:
                raise StorageError(f"{path}: bad sidecar header")
            pivots, minors = [], []
            line = f.readline()
            while line:
                if line.startswith("P "):
                    pivots.append(parse_scalar(line[2:], store.prec, store.kind))
                    line = f.readline()
                elif line.startswith("M "):
                    m = int(line.split()[1])
                    signed = [parse_scalar(f.readline(), store.prec, store.kind)
                              for _ in range(m)]
                    minors.append((m, signed))
                    line = f.readline()
                else:
                    raise StorageError(f"{path}: unexpected line {line!r}")
    except OSError as exc:
        raise StorageError(f"cannot read sidecar {path}: {exc}")
    return pivots, minors


def _det_before_stage(store, s):
    """det of the leading s*N_b square, from earlier sidecars (same multiply
    chain as the serial engine, so bit-identical)."""
    if s == 0:
        return None
    det = None
    with store.prec.context():
        for stage in range(s):
            pivots, _ = _read_sidecar(store, stage)
            for p in pivots:
                det = p if det is None else det * p
    return det


_OP_RUNNERS = {
    "FACTOR": _op_factor,
    "ROWPANEL": _op_rowpanel,
    "COLFACTOR": _op_colfactor,
    "TRAIL": _op_trail,
    "LSELF": _op_lself,
    "LTRAIL": _op_ltrail,
}


def paged_eliminate(store: BlockStore, collect_minors: bool = True,
                    series: bool = True, sink=None):
    """Run (or resume) the paged elimination to completion.

    Returns (trace, minor_series) assembled from the stage sidecars;
    bit-identical to elim.eliminate on the assembled matrix.
    """
    recover(store)
    done = store.journal_done()
    try:
        for op_id in build_schedule(store.B):
            if op_id in done:
                continue
            if op_id[1] == "EMIT":
                _op_emit(store, op_id, collect_minors, series)
            else:
                _OP_RUNNERS[op_id[1]](store, op_id)
    except ZeroPivot as exc:
        trace, minors = assemble_results(store, collect_minors)
        raise ZeroPivot(exc.step, trace=trace, series=minors) from None
    trace, minors = assemble_results(store, collect_minors)
    if sink is not None and minors is not None:
        for m in minors.sizes():
            sink(minors.rows[m])
    return trace, minors


def assemble_results(store: BlockStore, collect_minors: bool = True):
    """Trace and minors from the sidecars of a completed (or partial) run."""
    trace = EliminationTrace(n=store.n, prec=store.prec)
    minors = MinorSeries(store.prec) if collect_minors else None
    done = store.journal_done()
    with store.prec.context():
        det = None
        for s in range(store.B):
            if (s, "EMIT", s, s) not in done:
                break
            pivots, mrows = _read_sidecar(store, s)
            for p in pivots:
                trace.pivots.append(p)
                det = p if det is None else det * p
                trace.det_series.append(det)
                trace.step += 1
            if minors is not None:
                for m, signed in mrows:
                    row = MinorRow(m, signed, None)
                    _attach_normalized(row)
                    minors.add(row)
    return trace, minors


def extend_grid(store: BlockStore, extra_block_rows: int, generator) -> BlockStore:
    """Enlarge a fully processed grid by ``extra_block_rows`` block rows and
    columns; ``generator(i, j)`` supplies new entries (1-based global
    indices).  A subsequent paged_eliminate resumes from the first new
    pivot, reusing every completed panel.
    """
    if extra_block_rows < 0:
        raise ValueError("extra_block_rows must be >= 0")
    if extra_block_rows == 0:
        return store
    done = store.journal_done()
    for s in range(store.B):
        if (s, "EMIT", s, s) not in done:
            raise GridIncomplete(
                f"stage {s} unfinished; complete the current grid first")
    old_B, nb = store.B, store.N_b
    new_B = old_B + extra_block_rows
    with store.prec.context():
        conv = mpc if store.kind == "complex" else mpfr
        zero = conv(0)
        store.B = new_B  # so _path/_write_block_file see the new geometry
        for i in range(new_B):
            for j in range(new_B):
                if i < old_B and j < old_B:
                    continue
                rows = [[conv(generator(i * nb + bi + 1, j * nb + bj + 1))
                         for bj in range(nb)] for bi in range(nb)]
                store._write_block_file(store._path("a", i, j), "a", i, j, rows)
                zrows = [[zero for _ in range(nb)] for _ in range(nb)]
                store._write_block_file(store._path("l", i, j), "l", i, j, zrows)
    store._write_meta()
    return store
