import os
import signal
import subprocess
import sys
import time

import pytest

from detseries.cli import main
from detseries.matrix import MatrixBuffer
from detseries.scalars import Precision


def gen(tmp_path, name, *argv):
    out = tmp_path / name
    assert main(["gen", *argv, "--out", str(out)]) == 0
    return out


def uniform(tmp_path, n=8, seed=3, bits=256, name="m.mpmat"):
    return gen(tmp_path, name, "random_uniform", "--n", str(n),
               "--seed", str(seed), "--prec-bits", str(bits))


class TestGen:
    def test_reproducible_bytes(self, tmp_path):
        a = uniform(tmp_path, name="a.mpmat")
        b = uniform(tmp_path, name="b.mpmat")
        assert a.read_bytes() == b.read_bytes()
        c = uniform(tmp_path, seed=4, name="c.mpmat")
        assert a.read_bytes() != c.read_bytes()

    def test_families_produce_loadable_files(self, tmp_path):
        h = gen(tmp_path, "h.mpmat", "hilbert", "--n", "5")
        assert MatrixBuffer.load(h).kind == "real"
        zeros = os.path.join(os.path.dirname(__file__), "..", "data",
                             "zeta_zeros.txt")
        p = gen(tmp_path, "p.mpmat", "power", "--m", "2", "--t", "25",
                "--zeros", zeros, "--prec-bits", "128")
        P = MatrixBuffer.load(p)
        assert P.n == 5 and P.kind == "complex"

    def test_missing_n_is_usage_error(self, tmp_path):
        assert main(["gen", "hilbert", "--out", str(tmp_path / "x")]) == 2

    def test_bad_zeros_file_exit_6(self, tmp_path):
        zf = tmp_path / "z.txt"
        zf.write_text("14.134725141734694\n")
        assert main(["gen", "beta", "--n", "5", "--zeros", str(zf),
                     "--out", str(tmp_path / "x")]) == 6


class TestDetAndMinors:
    def test_det_series_output(self, tmp_path):
        h = gen(tmp_path, "h.mpmat", "hilbert", "--n", "4")
        out = tmp_path / "out"
        assert main(["det", str(h), "--out", str(out)]) == 0
        lines = (out / "dets.txt").read_text().splitlines()
        assert len(lines) == 4
        assert lines[0].split()[0] == "1"
        # det of the 4x4 Hilbert matrix is 1/6048000
        assert lines[3].split()[1].startswith("0.16534391534391534")

    def test_minors_with_oracle(self, tmp_path, capsys):
        m = uniform(tmp_path, n=6)
        out = tmp_path / "out"
        assert main(["minors", str(m), "--out", str(out), "--oracle"]) == 0
        assert "oracle check passed" in capsys.readouterr().out
        for n in range(2, 7):
            lines = (out / f"minors_{n}.txt").read_text().splitlines()
            assert len(lines) == n
            k, signed, norm = lines[0].split()
            assert k == "1" and norm != "undefined"

    def test_workers_and_paged_match_serial_bytes(self, tmp_path):
        m = uniform(tmp_path, n=12)
        outs = []
        for name, extra in [("serial", []),
                            ("par", ["--workers", "2"]),
                            ("paged", ["--block-size", "4", "--paging-dir",
                                       str(tmp_path / "grid")])]:
            out = tmp_path / name
            assert main(["minors", str(m), "--out", str(out), *extra]) == 0
            outs.append(out)
        ref = (outs[0] / "dets.txt").read_bytes()
        for out in outs[1:]:
            assert (out / "dets.txt").read_bytes() == ref
        for n in range(2, 13):
            ref = (outs[0] / f"minors_{n}.txt").read_bytes()
            for out in outs[1:]:
                assert (out / f"minors_{n}.txt").read_bytes() == ref

    def test_limit_n_truncates_series(self, tmp_path):
        m = uniform(tmp_path, n=10)
        out = tmp_path / "out"
        assert main(["det", str(m), "--out", str(out), "--limit-n", "5"]) == 0
        assert len((out / "dets.txt").read_text().splitlines()) == 5

    def test_zero_pivot_exit_3_with_partial_output(self, tmp_path):
        rows = [[1, 2, 3], [2, 4, 5], [1, 1, 1]]
        path = tmp_path / "z.mpmat"
        MatrixBuffer.from_rows(rows, Precision(128)).save(path)
        out = tmp_path / "out"
        assert main(["minors", str(path), "--out", str(out)]) == 3
        assert (out / "dets.txt").read_text().splitlines() == \
            ["1 " + (out / "dets.txt").read_text().split()[1]]
        # partial-pivoting mode pushes through the zero pivot for dets
        assert main(["det", str(path), "--out", str(tmp_path / "out2"),
                     "--pivot-mode", "partial"]) == 0


class TestExitCodes:
    def test_argparse_usage_is_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["det"])  # missing input
        assert exc.value.code == 2

    def test_missing_input_file(self, tmp_path):
        assert main(["det", str(tmp_path / "missing.mpmat")]) == 2

    def test_corrupt_block_store_exit_9(self, tmp_path):
        m = uniform(tmp_path, n=8)
        grid = tmp_path / "grid"
        grid.mkdir()
        (grid / "meta.txt").write_text("NOTASTORE 1 2 3 4\n")
        assert main(["det", str(m), "--out", str(tmp_path / "o"),
                     "--block-size", "4", "--paging-dir", str(grid)]) == 9

    def test_study_low_precision_input_exit_10(self, tmp_path):
        m = uniform(tmp_path, n=8, bits=128)
        assert main(["study", str(m), "--prec-lo", "128", "--prec-hi", "512",
                     "--out", str(tmp_path / "o")]) == 10

    def test_verify_exit_codes(self, tmp_path):
        # clean pass on a well-conditioned matrix
        m = uniform(tmp_path, n=6, bits=256)
        assert main(["verify", str(m)]) == 0
        # Hilbert at 64 bits loses more digits than the threshold allows
        h = gen(tmp_path, "h.mpmat", "hilbert", "--n", "12",
                "--prec-bits", "64")
        assert main(["verify", str(h)]) == 11
        # oracle size cap
        big = uniform(tmp_path, n=13, name="big.mpmat")
        assert main(["verify", str(big)]) == 5


class TestStudy:
    def test_end_to_end(self, tmp_path, capsys):
        m = uniform(tmp_path, n=24, bits=1024)
        out = tmp_path / "study"
        assert main(["study", str(m), "--prec-lo", "128", "--prec-hi", "512",
                     "--n-min", "2", "--out", str(out)]) == 0
        assert (out / "agreement.csv").read_text().startswith(
            "n,avg_digits,min_digits,valid")
        fit = (out / "fit.txt").read_text()
        assert "slope=" in fit and "r2=" in fit
        assert "slope=" in capsys.readouterr().out


class TestBench:
    def test_smoke(self, capsys):
        assert main(["bench", "--sizes", "8,16", "--precisions", "128",
                     "--workers", "1"]) == 0
        out = capsys.readouterr().out
        assert "seconds" in out
        assert "time(n=16)/time(n=8)" in out


class TestCheckpointInterrupt:
    def test_sigterm_checkpoints_and_resume_matches(self, tmp_path):
        src = str((__import__("pathlib").Path(__file__).parents[1] / "src"))
        m = uniform(tmp_path, n=200, seed=11, name="big.mpmat")
        ref_out = tmp_path / "ref"
        assert main(["minors", str(m), "--out", str(ref_out)]) == 0

        out = tmp_path / "resumed"
        ck = tmp_path / "ck"
        argv = [sys.executable, "-m", "detseries.cli", "minors", str(m),
                "--out", str(out), "--checkpoint-dir", str(ck),
                "--checkpoint-every", "3"]
        env = dict(os.environ, PYTHONPATH=src)
        proc = subprocess.Popen(argv, env=env)
        deadline = time.time() + 60
        while time.time() < deadline and not (ck / "state.txt").exists():
            time.sleep(0.005)
        assert (ck / "state.txt").exists(), "no checkpoint before completion"
        proc.send_signal(signal.SIGTERM)
        rc = proc.wait(timeout=60)
        assert rc == 130, f"expected interrupted exit 130, got {rc}"

        # second invocation resumes from the snapshot and completes
        rc = subprocess.run(argv, env=env).returncode
        assert rc == 0
        assert (out / "dets.txt").read_bytes() == \
            (ref_out / "dets.txt").read_bytes()
        for n in range(2, 201):
            assert (out / f"minors_{n}.txt").read_bytes() == \
                (ref_out / f"minors_{n}.txt").read_bytes()
