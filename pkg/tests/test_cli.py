import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from selftest_lab import cli
from selftest_lab.games import GameSpec
from selftest_lab.qmath import StateVector
from selftest_lab.strategies import Strategy, save_strategy


def run(*argv):
    return cli.main([str(a) for a in argv])


def write_config(path, data):
    path.write_text(json.dumps(data, indent=2), encoding="utf-8")
    return path


def test_simulate_ideal_chsh(tmp_path):
    assert run("simulate", "--game", "chsh", "--n", 3, "--out", tmp_path) == 0
    data = json.loads((tmp_path / "simulate.json").read_text())
    values = data["runs"][0]["values"]
    assert len(values) == 3
    assert all(abs(v - 2 * math.sqrt(2)) < 1e-9 for v in values)


def test_simulate_magic_square_wins(tmp_path):
    assert run("simulate", "--game", "magic_square", "--n", 1, "--out", tmp_path) == 0
    data = json.loads((tmp_path / "simulate.json").read_text())
    assert data["runs"][0]["win_probabilities"][0] == pytest.approx(1.0, abs=1e-9)


def test_simulate_csv_is_byte_identical(tmp_path):
    cfg = write_config(tmp_path / "c.json", {
        "game": {"kind": "tilted", "copies": 2, "thetas": [0.4, 0.6]},
        "noise": {"kind": "angle_jitter", "magnitude": 0.1},
        "seeds": [3, 4],
        "output": {"dir": str(tmp_path / "a"), "formats": ["csv"]},
    })
    assert run("simulate", "--config", cfg) == 0
    assert run("simulate", "--config", cfg, "--out", tmp_path / "b") == 0
    a = (tmp_path / "a" / "simulate.csv").read_bytes()
    assert a == (tmp_path / "b" / "simulate.csv").read_bytes()
    assert a.startswith(b"# selftest-lab simulate csv v1\n")
    assert not (tmp_path / "a" / "simulate.json").exists()


def test_certify_ideal_tilted(tmp_path):
    code = run("certify", "--game", "tilted", "--n", 2, "--theta", math.pi / 4, "--theta", math.pi / 6, "--out", tmp_path)
    assert code == 0
    report = json.loads((tmp_path / "report_seed0.json").read_text())
    assert report["schema_version"] == 1
    assert report["state_distance"] <= 1e-8


def test_certify_perturbed_report_is_complete(tmp_path):
    assert run("certify", "--game", "chsh", "--n", 3, "--noise", "angle_jitter:0.05", "--seed", 2, "--out", tmp_path) == 0
    report = json.loads((tmp_path / "report_seed2.json").read_text())
    ext = report["extraction"]
    assert len(ext["good_set_sizes"]) == 3 and len(ext["chosen_contexts"]) == 3
    assert report["metadata"]["noise"] == {"kind": "angle_jitter", "magnitude": 0.05, "seed": 2}
    assert any(r["applied"] for r in report["repairs"].values())


def test_certify_degenerate_strategy_exits_4(tmp_path):
    # Every question's outcome-0 projector is |0><0| but the state is |11>.
    fam = np.stack([np.diag([1, 0]), np.diag([0, 1])]).astype(complex)
    proj = np.stack([fam, fam])
    s = Strategy(GameSpec("chsh", 1), StateVector(np.array([0, 0, 0, 1]), (2, 2)), proj, proj, ((2, 2),))
    save_strategy(s, tmp_path / "zeroed")
    code = run("certify", "--strategy", tmp_path / "zeroed", "--out", tmp_path / "o")
    assert code == cli.EXIT_DEGENERATE
    err = json.loads((tmp_path / "o" / "error_seed0.json").read_text())
    assert err["error"] == "degenerate_junk"


def test_certify_premise_violation_exits_3(tmp_path):
    code = run("certify", "--game", "chsh", "--n", 2, "--noise", "angle_jitter:0.2", "--epsilon", 1e-9, "--out", tmp_path)
    assert code == cli.EXIT_PREMISE
    assert json.loads((tmp_path / "error_seed0.json").read_text())["error"] == "premise_violation"


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "game": {"kind": "chsh",\n  "copies": 2\n', encoding="utf-8")
    assert run("simulate", "--config", bad) == 2
    assert "line" in capsys.readouterr().err
    assert run("simulate", "--game", "magic_square", "--n", 3) == 2
    assert run("simulate", "--game", "poker") == 2
    cfg = write_config(tmp_path / "c.json", {"game": {"kind": "chsh"}, "seeds": []})
    assert run("simulate", "--config", cfg) == 2
    cfg = write_config(tmp_path / "d.json", {"game": {"kind": "chsh"}, "colour": 1})
    assert run("simulate", "--config", cfg) == 2
    assert run("sweep", "--game", "chsh", "--out", tmp_path) == 2
    with pytest.raises(SystemExit) as exc:
        run("frobnicate")
    assert exc.value.code == 2


def test_sweep_rows_and_fit(tmp_path):
    cfg = write_config(tmp_path / "s.json", {
        "game": {"kind": "chsh"},
        "noise": {"kind": "angle_jitter"},
        "seeds": [0, 1, 2, 3, 4],
        "sweep": {"ns": [1, 2, 3], "epsilons": [1e-4, 1e-3, 1e-2]},
        "output": {"dir": str(tmp_path / "out")},
    })
    assert run("sweep", "--config", cfg, "--jobs", 1) == 0
    lines = (tmp_path / "out" / "sweep.csv").read_text().splitlines()
    assert lines[0] == "# selftest-lab sweep csv v1"
    assert lines[1].split(",") == list(cli.CSV_COLUMNS)
    assert len(lines) == 2 + 45
    fit = json.loads((tmp_path / "out" / "scaling_fit.json").read_text())
    vs = fit["fits"]["vs_per_copy_deficit"]
    assert vs["p_eps"] <= 0.6 and "residual" in vs


def test_sweep_parallel_matches_serial(tmp_path, monkeypatch):
    cfg = write_config(tmp_path / "s.json", {
        "game": {"kind": "tilted", "thetas": [0.5]},
        "seeds": [0, 1],
        "sweep": {"ns": [1, 2], "epsilons": [1e-3, 1e-2]},
        "output": {"formats": ["csv"]},
    })
    assert run("sweep", "--config", cfg, "--out", tmp_path / "serial", "--jobs", 1) == 0
    monkeypatch.setenv(cli.JOBS_ENV, "2")
    assert run("sweep", "--config", cfg, "--out", tmp_path / "par") == 0

    def strip_runtime(path):
        return [line.rsplit(",", 1)[0] for line in path.read_text().splitlines()]

    assert strip_runtime(tmp_path / "serial" / "sweep.csv") == strip_runtime(tmp_path / "par" / "sweep.csv")


def test_bad_jobs_env(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.JOBS_ENV, "many")
    cfg = write_config(tmp_path / "s.json", {"sweep": {"ns": [1], "epsilons": [1e-3]}})
    assert run("sweep", "--config", cfg, "--out", tmp_path) == 2


def test_interrupted_write_leaves_no_file(tmp_path, monkeypatch):
    def boom(src, dst):
        raise KeyboardInterrupt

    monkeypatch.setattr(cli.os, "replace", boom)
    with pytest.raises(KeyboardInterrupt):
        cli.atomic_write_text(tmp_path / "sweep.csv", "a,b\n1,2\n")
    assert os.listdir(tmp_path) == []


def test_show_report(tmp_path, capsys):
    assert run("certify", "--game", "chsh", "--n", 2, "--out", tmp_path) == 0
    capsys.readouterr()
    assert run("show-report", tmp_path / "report_seed0.json") == 0
    out = capsys.readouterr().out
    assert "state distance" in out and "chsh x2" in out
    assert run("show-report", tmp_path / "missing.json") == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "selftest_lab", "simulate", "--game", "chsh", "--out", str(tmp_path)],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0, proc.stderr
