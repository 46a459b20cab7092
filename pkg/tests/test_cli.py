import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from invariot import cli
from invariot.core import NumericalFailureError
from invariot.embeddings import rotated_vocabulary


def run(argv):
    return cli.main([str(a) for a in argv])


def write_vec(path, table, digits=17):
    lines = [f"{table.vocab_size} {table.dim}"]
    for i, tok in enumerate(table.tokens):
        lines.append(tok + " " + " ".join(f"{v:.{digits}g}" for v in table.vectors[:, i]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def strip_timing(doc):
    return {k: v for k, v in doc.items() if k != "timing"}


class TestParsing:
    @pytest.mark.parametrize("argv", [
        [],
        ["bogus"],
        ["synth", "--unknown-flag"],
        ["synth", "--p", "0.5"],
        ["synth", "--lambda0", "-1"],
        ["synth", "--repetitions", "0"],
        ["synth", "--sigmas", "a,b"],
        ["check-gw", "--trials", "x"],
    ])
    def test_invalid_exit_2(self, argv, capsys):
        with pytest.raises(SystemExit) as exc:
            run(argv)
        assert exc.value.code == 2
        assert "error" in capsys.readouterr().err

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run(["--version"])
        assert exc.value.code == 0
        assert "invariot" in capsys.readouterr().out


class TestChecks:
    def test_check_gw(self, tmp_path, capsys):
        out = tmp_path / "gw.json"
        assert run(["check-gw", "--trials", 100, "--seed", 0, "--out", out]) == 0
        doc = json.loads(out.read_text())
        assert doc["max_abs_diff"] <= 1e-9
        assert "max |cross term" in capsys.readouterr().out

    def test_check_gw_failure_exit_4(self):
        assert run(["check-gw", "--trials", 5, "--tol", "1e-30"]) == 4

    def test_check_procrustes(self, tmp_path):
        out = tmp_path / "p.json"
        assert run(["check-procrustes", "--trials", 10, "--samples", 100, "--out", out]) == 0
        assert json.loads(out.read_text())["passed"] is True

    def test_check_procrustes_failure_exit_4(self, monkeypatch):
        real = cli.closed_form_suite
        monkeypatch.setattr(cli, "closed_form_suite", lambda **kw: real(margin_tol=-1.0, **kw))
        assert run(["check-procrustes", "--trials", 2, "--samples", 10]) == 4


class TestSynth:
    ARGS = ["synth", "--d", 3, "--n", 100, "--family", "inf", "--sigmas", "0", "--methods", "invariant",
            "--repetitions", 1]

    def test_accuracy_row(self, tmp_path):
        out = tmp_path / "s.csv"
        assert run(self.ARGS + ["--out", out]) == 0
        rows = list(csv.DictReader(out.open()))
        assert len(rows) == 1
        assert rows[0]["method"] == "invariant-inf" and float(rows[0]["accuracy"]) == 1.0
        summary = json.loads((tmp_path / "s.json").read_text())
        assert summary["config"]["solver"]["restarts"] == 128
        assert summary["timing"]["runtime_s"] >= 0

    def test_deterministic(self, tmp_path):
        args = ["synth", "--d", 2, "--n", 20, "--sigmas", "0,0.1", "--methods", "emd,sinkhorn,invariant,oracle",
                "--repetitions", 2, "--restarts", 4, "--seed", 5]
        docs, csvs = [], []
        for name in ("a", "b"):
            out = tmp_path / f"{name}.csv"
            assert run(args + ["--out", out]) == 0
            csvs.append([{k: v for k, v in r.items() if k != "runtime_ms"} for r in csv.DictReader(out.open())])
            docs.append(strip_timing(json.loads((tmp_path / f"{name}.json").read_text())))
        assert csvs[0] == csvs[1]
        assert json.dumps(docs[0], sort_keys=True) == json.dumps(docs[1], sort_keys=True)

    def test_numerical_failure_exit_3(self, tmp_path, monkeypatch, capsys):
        def boom(*a, **k):
            raise NumericalFailureError("Sinkhorn kernel row 0 vanished")

        monkeypatch.setattr(cli, "run_noise_sweep", boom)
        assert run(self.ARGS + ["--out", tmp_path / "s.csv"]) == 3
        assert "numerical failure" in capsys.readouterr().err
        assert not (tmp_path / "s.csv").exists()

    def test_bad_method_exit_2(self, tmp_path):
        assert run(["synth", "--methods", "magic", "--out", tmp_path / "s.csv"]) == 2


@pytest.fixture(scope="module")
def vec_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("vec")
    src, tgt, Q = rotated_vocabulary(V=300, d=20, extra=100, seed=0)
    return write_vec(d / "a.vec", src), write_vec(d / "b.vec", tgt), Q


class TestAlign:
    def align(self, tmp_path, vec_files, *extra):
        a, b, _ = vec_files
        out = tmp_path / "align.json"
        code = run(["align", "--src", a, "--tgt", b, "--subsample-k", 100, "--stage2-vocab", 300,
                    "--restarts", 16, "--out", out, *extra])
        return code, out

    def test_rotated_copy(self, tmp_path, vec_files):
        code, out = self.align(tmp_path, vec_files, "--map-out", tmp_path / "P.npy", "--trace", tmp_path / "t.csv")
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["P@1"] == 1.0
        assert doc["evaluated"] == 400 and doc["skipped"] == 0
        assert doc["config"]["stage1_size"] == 100 and doc["config"]["csls_k"] == 10
        P = np.load(tmp_path / "P.npy")
        np.testing.assert_allclose(P, vec_files[2].T, atol=1e-6)
        trace = list(csv.DictReader((tmp_path / "t.csv").open()))
        assert {r["stage"] for r in trace} == {"1", "2"}
        assert not (tmp_path / "t.csv.part").exists()

    def test_deterministic(self, tmp_path, vec_files):
        docs = []
        for name in ("x", "y"):
            sub = tmp_path / name
            sub.mkdir()
            assert self.align(sub, vec_files)[0] == 0
            docs.append(strip_timing(json.loads((sub / "align.json").read_text())))
        assert docs[0] == docs[1]

    def test_dictionary(self, tmp_path, vec_files):
        dic = tmp_path / "dict.txt"
        dic.write_text("w1 w1\nw2 w3\nw2 w2\nunknown w4\n")
        code, out = self.align(tmp_path, vec_files, "--dict", dic)
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["P@1"] == 1.0 and doc["evaluated"] == 2 and doc["skipped"] == 1

    def test_missing_file(self, tmp_path, vec_files):
        assert run(["align", "--src", tmp_path / "nope.vec", "--tgt", vec_files[1], "--out", tmp_path / "o.json"]) == 2

    def test_malformed_file(self, tmp_path, vec_files, capsys):
        bad = tmp_path / "bad.vec"
        bad.write_text("2 3\na 1 0 0\nb 0 1\n")
        assert run(["align", "--src", bad, "--tgt", vec_files[1], "--out", tmp_path / "o.json"]) == 2
        assert ":3:" in capsys.readouterr().err

    def test_dimension_mismatch(self, tmp_path, vec_files):
        other = tmp_path / "c.vec"
        other.write_text("2 3\na 1 0 0\nb 0 1 0\n")
        assert run(["align", "--src", vec_files[0], "--tgt", other, "--out", tmp_path / "o.json"]) == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "invariot", "check-gw", "--trials", "3"],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0, proc.stderr
