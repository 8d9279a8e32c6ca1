import csv
import json

import pytest

from trianglescope import cli
from trianglescope.dist_core import load_distribution


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_flags_make_and_eval_maxcorr(tmp_path, capsys):
    path = tmp_path / "mc.json"
    assert run(capsys, "flags", "make", "maxcorr", "--nu", "1/6", "--out", str(path))[0] == 0
    code, out, _ = run(capsys, "flags", "eval", str(path))
    data = json.loads(out)
    assert code == 0
    assert data["sym_coords"] == {"s111": "1/4", "s112": "3/8", "s123": "3/8"}
    assert data["finner"]["satisfied"]


def test_flags_squares_all_equal_half(tmp_path, capsys):
    path = tmp_path / "sq.json"
    run(capsys, "flags", "make", "squares", "--out", str(path))
    data = json.loads(run(capsys, "flags", "eval", str(path))[1])
    assert data["sym_coords"]["s111"] == "1/2"
    code, out, _ = run(capsys, "flags", "check", str(path))
    assert code == 0 and json.loads(out)["fully_symmetric"] is False


def test_counterexample_family(tmp_path, capsys):
    path = tmp_path / "c3.json"
    run(capsys, "flags", "make", "counterexample3", "--out", str(path))
    data = json.loads(run(capsys, "flags", "eval", str(path))[1])
    assert data["sym_coords"] == {"s111": "7/18", "s112": "7/18", "s123": "2/9"}
    assert data["fully_symmetric"]


def test_missing_file_exit_code(capsys):
    code, _, err = run(capsys, "flags", "eval", "nonexistent.json")
    assert code == 2
    assert json.loads(err)["error"] == "ValidationError"


def test_invalid_parameter_exit_code(capsys):
    code, _, err = run(capsys, "flags", "make", "maxcorr", "--nu", "1/2")
    assert code == 2 and "message" in json.loads(err)


def test_ineq_bounds_text(capsys):
    code, out, _ = run(capsys, "ineq", "bounds", "--strategy", "all1", "--l", "1")
    assert code == 0 and "3/2 - (135/64)w" in out
    out = run(capsys, "ineq", "bounds", "--strategy", "maxcorr", "--l", "1")[1]
    assert "(9/64)w" in out
    out = run(capsys, "ineq", "bounds", "--strategy", "squares", "--l", "2")[1]
    assert "5/96 - (31/192)w" in out


def test_ineq_eval_ejm(capsys):
    data = json.loads(run(capsys, "ineq", "eval", "--dist", "ejm")[1])
    assert data["violates_l1"] and data["violates_l2"]


def test_ejm_command_round_trips(tmp_path, capsys):
    path = tmp_path / "ejm.json"
    assert run(capsys, "ejm", "--out", str(path))[0] == 0
    p = load_distribution(path)
    assert p[1, 1, 1] * 256 == 25


def test_region_outputs(tmp_path, capsys):
    code, _, _ = run(capsys, "region", "--grid", "12", "--out", str(tmp_path))
    assert code == 0
    with open(tmp_path / "region_points.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["s111", "s112", "s123", "x", "y", "source_family"]
    with open(tmp_path / "region_polygon.csv") as fh:
        assert fh.readline().strip() == "x,y"
    markers = (tmp_path / "region_markers.csv").read_text()
    assert "ejm" in markers.lower() and "finner" in markers.lower()
    meta = json.loads((tmp_path / "region_meta.json").read_text())
    assert meta["contains"]["uniform"] and not meta["contains"]["ejm"]


def test_scan_is_deterministic(tmp_path, capsys):
    args = ["scan", "--density", "2", "--epochs", "10", "--samples", "128", "--restarts", "1",
            "--hidden", "4", "--seed", "3"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(capsys, *args, "--out", str(a))[0] == 0
    run(capsys, *args, "--out", str(b))
    assert a.read_bytes() == b.read_bytes()
    header = a.read_text().splitlines()[0]
    assert header == "s111,s112,s123,distance,best_restart,seed,distance_clipped"


def test_train_uniform(tmp_path, capsys):
    code, _, _ = run(capsys, "train", "--target", "uniform", "--epochs", "1500", "--samples", "512",
                     "--restarts", "1", "--hidden", "8", "8", "--out", str(tmp_path))
    assert code == 0
    result = json.loads((tmp_path / "result.json").read_text())
    assert result["distance"] <= 1e-2
    assert (tmp_path / "model.json").exists() and (tmp_path / "history.csv").exists()


def test_oracle_maxs111_with_witness(tmp_path, capsys):
    path = tmp_path / "c3.json"
    run(capsys, "flags", "make", "counterexample3", "--out", str(path))
    code, out, _ = run(capsys, "oracle", "maxs111", "--n", "3", "--cards", "3,3,3", "--budget", "20",
                       "--witness", str(path))
    assert code == 0 and json.loads(out)["best_s111"] == "7/18"


def test_threads_env_fallback(monkeypatch):
    monkeypatch.setenv("TRIANGLESCOPE_THREADS", "3")
    args = cli.build_parser().parse_args(["ejm"])
    for key, value in cli.GLOBAL_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, value)
    assert cli._threads(args) == 3
