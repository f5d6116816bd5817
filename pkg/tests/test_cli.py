import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from mcfloat import __version__, experiments as ex
from mcfloat.cli import main
from mcfloat.linalg import Strategy, get_default_plan


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def strip_timing(obj):
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k not in ("seconds", "out")}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


@pytest.fixture
def small_csv(tmp_path, rng):
    X = rng.standard_normal((60, 3))
    y = (X[:, 0] - X[:, 2] > 0).astype(float)
    path = tmp_path / "small.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["a", "b", "c", "label"])
        w.writerows(np.column_stack([X, y]).tolist())
    return path


@pytest.fixture
def small_tsv(tmp_path):
    path = tmp_path / "tree.tsv"
    edges = ex.hyp.balanced_tree(13, 3)
    path.write_text("".join(f"n{a}\tn{b}\n" for a, b in edges))
    return path


class TestErrors:
    @pytest.mark.parametrize("argv", [
        ["linreg", "--precision", "b8"],
        ["linreg", "--nc", "0"],
        ["linreg", "--lr", "-1"],
        ["linreg", "--epochs", "0"],
        ["logreg", "--data", "/nonexistent/file.csv"],
    ])
    def test_config_errors_exit_nonzero(self, capsys, argv):
        code, out, err = run(capsys, *argv)
        assert code != 0
        assert err.startswith("mcfloat: error:") and err.count("\n") == 1

    def test_malformed_csv(self, capsys, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("x,y,label\n1,2,0\n3,oops,1\n")
        code, _, err = run(capsys, "logreg", "--data", str(bad), "--epochs", "2")
        assert code == 2 and "bad.csv:3" in err

    def test_ragged_csv(self, capsys, tmp_path):
        bad = tmp_path / "ragged.csv"
        bad.write_text("1,2,0\n3,1\n")
        assert run(capsys, "mlp", "--data", str(bad), "--epochs", "1")[0] == 2

    def test_malformed_edge_list(self, capsys, tmp_path):
        bad = tmp_path / "bad.tsv"
        bad.write_text("a\tb\nc d\n")
        code, _, err = run(capsys, "embed", "--data", str(bad), "--epochs", "1")
        assert code == 2 and "bad.tsv:2" in err

    @pytest.mark.parametrize("argv", [["frobnicate"], ["linreg", "--nc", "1,x"], ["linreg", "--fma", "maybe"]])
    def test_argument_errors(self, capsys, argv):
        code, _, err = run(capsys, *argv)
        assert code == 2 and "error" in err


class TestLinreg:
    def test_report_and_curves(self, capsys, tmp_path):
        code, out, _ = run(capsys, "linreg", "--nc", "2", "--epochs", "30", "--out", str(tmp_path))
        assert code == 0
        rep = json.loads((tmp_path / "report.json").read_text())
        assert rep["version"] == __version__
        assert rep["config"]["nc"] == [2] and rep["config"]["epochs"] == 30
        assert set(rep["fma"]) == {"b16", "b32", "b64"}
        assert rep["reduction"] == "sequential"
        labels = [(r["precision"], r["nc"]) for r in rep["runs"]]
        assert labels == [("b16", 1), ("b32", 1), ("b64", 1), ("b16", 2)]
        assert all(len(r["losses"]) == 30 for r in rep["runs"])
        with open(tmp_path / "curves.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["precision", "nc", "epoch", "loss"]
        assert len(rows) == 1 + 4 * 30
        assert "b16 nc=2" in out

    def test_json_path_output(self, capsys, tmp_path):
        target = tmp_path / "sub" / "lin.json"
        assert run(capsys, "linreg", "--nc", "2", "--epochs", "3", "--out", str(target))[0] == 0
        assert target.exists() and (tmp_path / "sub" / "lin_curves.csv").exists()

    def test_bit_reproducible(self, capsys, tmp_path):
        reports = []
        for name in ("a.json", "b.json"):
            run(capsys, "linreg", "--nc", "2,3", "--epochs", "20", "--seed", "7",
                "--out", str(tmp_path / name))
            reports.append(strip_timing(json.loads((tmp_path / name).read_text())))
        assert reports[0] == reports[1]

    def test_flags_are_recorded_and_restored(self, capsys, tmp_path):
        out = tmp_path / "r.json"
        run(capsys, "linreg", "--nc", "2", "--epochs", "2", "--pairwise-reduction",
            "--fma", "off", "--out", str(out))
        rep = json.loads(out.read_text())
        assert rep["reduction"] == "pairwise"
        assert rep["fma"]["b32"] is False and rep["config"]["fma"] == "off"
        assert get_default_plan().strategy is Strategy.SEQUENTIAL


def test_logreg_on_csv(capsys, tmp_path, small_csv):
    out = tmp_path / "lr.json"
    code, text, _ = run(capsys, "logreg", "--data", str(small_csv), "--nc", "2", "--epochs", "30",
                        "--lr", "0.05", "--out", str(out))
    assert code == 0
    rep = json.loads(out.read_text())
    assert [(r["precision"], r["nc"]) for r in rep["runs"]] == [("b32", 1), ("b16", 1), ("b16", 2)]
    for r in rep["runs"]:
        assert 0 <= r["test_accuracy"] <= 1 and np.isfinite(r["final_loss"])
        assert [ep for ep, _ in r["curve"]] == [0, 10, 20, 30]
    assert "test_accuracy=" in text


def test_mlp_with_mc_state(capsys, tmp_path, small_csv):
    out = tmp_path / "mlp.json"
    code, _, _ = run(capsys, "mlp", "--data", str(small_csv), "--nc", "2", "--epochs", "3",
                     "--mc-state", "--out", str(out))
    assert code == 0
    rep = json.loads(out.read_text())
    assert rep["config"]["mc_state"] is True
    assert len(rep["runs"]) == 3


def test_embed_writes_tables(capsys, tmp_path, small_tsv):
    code, _, _ = run(capsys, "embed", "--data", str(small_tsv), "--precision", "b64", "--nc", "1,2",
                     "--epochs", "3", "--out", str(tmp_path / "emb"))
    assert code == 0
    rep = json.loads((tmp_path / "emb" / "report.json").read_text())
    assert rep["nodes"] == 13
    for r in rep["runs"]:
        assert 0 < r["map"] <= 1 and r["mean_rank"] >= 1
        assert (tmp_path / "emb" / f"embedding_b64_nc{r['nc']}.mct").exists()


def test_err_profile_both_modes(capsys, tmp_path):
    out = tmp_path / "e.json"
    assert run(capsys, "err-profile", "--precision", "b16", "--nc", "1,2", "--out", str(out))[0] == 0
    rep = json.loads(out.read_text())
    assert {row["mode"] for row in rep["table"]} == {"same", "vary"}
    assert {row["op"] for row in rep["table"]} == {"add", "scale", "mul"}
    assert rep["samples"] > 0


def test_bench_reports_repeats(capsys, tmp_path, monkeypatch):
    monkeypatch.setattr(ex, "BENCH_SIZES", {"dot": ((50,), (50,)), "mv": ((20, 10), (10,)),
                                            "matmul": ((8, 6), (6, 4))})
    out = tmp_path / "b.json"
    assert run(capsys, "bench", "--nc", "1,2", "--out", str(out))[0] == 0
    rows = json.loads(out.read_text())["timings"]
    assert [(r["op"], r["nc"]) for r in rows][:3] == [("dot", None), ("dot", 1), ("dot", 2)]
    assert all(r["repeats"] >= 3 and r["mean_s"] > 0 for r in rows)


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mcfloat.cli", "linreg", "--precision", "b99"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert proc.stderr.startswith("mcfloat: error:")
