import numpy as np
import pytest

from hjbtree import io
from hjbtree.cli import main


@pytest.fixture()
def cfg(tmp_path):
    p = tmp_path / "toy.cfg"
    p.write_text("model = toy\ncontrols = 2\nepsilon = 0.01\nT = 0.6\n")
    return p


def _summary(path):
    out = {}
    for line in path.read_text().splitlines():
        k, v = line.split(" = ", 1)
        out[k] = v
    return out


def test_full_tsa_outputs(cfg, tmp_path, capsys):
    out = tmp_path / "full"
    assert main(["full-tsa", "--config", str(cfg), "--out", str(out)]) == 0
    s = _summary(out / "summary.txt")
    for name in s["files"].split():
        assert (out / name).exists()
    head, rows = io.read_csv(out / "tree_summary.csv")
    assert head == ["level", "count"] and sum(int(r[1]) for r in rows) == int(s["nodes"])
    head, rows = io.read_csv(out / "policy.csv")
    assert head == ["t", "u"] and len(rows) == 6 and {float(r[1]) for r in rows} <= {-2.0, 0.0}
    head, rows = io.read_csv(out / "cost.csv")
    assert head == ["t", "J_partial"] and len(rows) == 7
    assert io.read_tree_header(out / "tree.bin")["counts"].sum() == int(s["nodes"])
    assert "phase" not in (out / "timing.txt").read_text() and "total" in (out / "timing.txt").read_text()
    assert "nodes" in capsys.readouterr().out


def test_single_control_cost_is_rollout_cost(tmp_path):
    p = tmp_path / "one.cfg"
    p.write_text("model = toy\ncontrols = 1\nsnapshot_controls = 1\nu_lo = -1\nu_hi = -1\nT = 0.5\n")
    assert main(["full-tsa", "--config", str(p), "--out", str(tmp_path / "o")]) == 0
    s = _summary(tmp_path / "o" / "summary.txt")
    assert s["nodes"] == "6"
    assert float(s["value"]) == pytest.approx(float(s["cost"]), rel=1e-14)


def test_pod_tsa_outputs(cfg, tmp_path):
    out = tmp_path / "pod"
    assert main(["pod-tsa", "--config", str(cfg), "--out", str(out)]) == 0
    s = _summary(out / "summary.txt")
    for name in s["files"].split():
        assert (out / name).exists()
    basis, deim = io.read_basis(out / "basis.bin")
    assert basis.rank_kept == int(s["rank"]) and deim is not None
    head, rows = io.read_csv(out / "singular_values.csv")
    assert head == ["i", "sigma"] and np.all(np.diff([float(r[1]) for r in rows]) <= 0)
    timing = (out / "timing.txt").read_text()
    assert "offline" in timing and "online" in timing


def test_bit_identical_reruns(cfg, tmp_path):
    for name in ("a", "b"):
        assert main(["pod-tsa", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
    for f in ("tree_summary.csv", "policy.csv", "cost.csv", "singular_values.csv", "basis.bin", "tree.bin"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_threads_do_not_change_outputs(cfg, tmp_path):
    main(["full-tsa", "--config", str(cfg), "--out", str(tmp_path / "t1"), "--threads", "1"])
    main(["full-tsa", "--config", str(cfg), "--out", str(tmp_path / "t4"), "--threads", "4"])
    for f in ("tree_summary.csv", "policy.csv", "cost.csv"):
        assert (tmp_path / "t1" / f).read_bytes() == (tmp_path / "t4" / f).read_bytes()


def test_validate_small(tmp_path):
    p = tmp_path / "v.cfg"
    p.write_text("model = toy\nval_controls = 1, 2\nval_steps = 3, 4\nval_error_T = 0.4\nval_ells = 2, 4\n"
                 "conv_T = 0.2\nconv_dts = 0.1\nconv_dt_ref = 0.05\nconv_ells = 2\n")
    out = tmp_path / "val"
    assert main(["validate", "--config", str(p), "--out", str(out)]) == 0
    s = _summary(out / "summary.txt")
    assert s["oracle_pass"] == "true" and s["tree_error_nonincreasing"] == "true"
    assert s["pruning_consistent"] == "true"
    for name in s["files"].split():
        assert (out / name).exists()


def test_info(cfg, tmp_path, capsys):
    main(["pod-tsa", "--config", str(cfg), "--out", str(tmp_path / "p")])
    capsys.readouterr()
    assert main(["info", str(tmp_path / "p" / "tree.bin"), str(tmp_path / "p" / "basis.bin")]) == 0
    text = capsys.readouterr().out
    assert "kind = tree" in text and "kind = basis" in text and "counts = 1 2 4" in text


def test_errors_are_reported(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("dt = -1\n")
    assert main(["full-tsa", "--config", str(bad)]) == 2
    err = capsys.readouterr().err
    assert "bad.cfg" in err and "dt" in err
    assert main(["full-tsa", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert main(["info", str(bad)]) == 2
