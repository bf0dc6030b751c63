import csv
import json
import os
import subprocess
import sys

import pytest

from rfimlab import cli
from rfimlab.config import ConfigError, ExperimentConfig, load_config, parse_seeds
from rfimlab.snapshot import read_snapshot

DATA = os.path.join(os.path.dirname(__file__), "data")


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_gs_evolve_clean_system(tmp_path):
    out = tmp_path / "gs"
    assert cli.main(["gs-evolve", "--d", "2", "--N", "4", "--eps", "0", "--seeds", "1", "--tol", "1e-6", "--out", str(out)]) == 0
    (bp,) = _rows(out / "breakpoints.csv")
    assert int(bp["size"]) == 16
    assert -1e-6 <= float(bp["M_lo"]) and float(bp["M_hi"]) <= 1e-6
    (row,) = _rows(out / "avalanches.csv")
    assert row["M_G"] == "16" and row["seed"] == "1" and row["config_hash"]
    events = [json.loads(line) for line in (out / "events.jsonl").read_text().splitlines()]
    assert events[0]["size"] == 16


def test_bootstrap_golden_snapshot(tmp_path):
    out = tmp_path / "bp"
    code = cli.main(["bootstrap", "--input", os.path.join(DATA, "diagonal_3x3.snap"), "--r", "2", "--out", str(out)])
    assert code == 0
    got = (out / "final_0.snap").read_bytes()
    with open(os.path.join(DATA, "diagonal_3x3_final.snap"), "rb") as fh:
        assert got == fh.read()
    assert read_snapshot(out / "final_0.snap").site_config().open.all()


def test_glauber_nesting_self_test(tmp_path):
    out = tmp_path / "gl"
    args = ["glauber", "--d", "2", "--N", "16", "--eps", "1.0", "--M-end", "3.0", "--seeds", "0..49",
            "--M-grid", "-1 0 1 2 3", "--check-nesting", "true", "--out", str(out)]
    assert cli.main(args) == 0
    summary = _rows(out / "summary.csv")
    assert len(summary) == 50 and all(r["nesting_ok"] == "true" for r in summary)


def test_glauber_snapshots_and_curve(tmp_path):
    out = tmp_path / "gl"
    args = ["glauber", "--d", "2", "--N", "8", "--eps", "1", "--M-end", "2", "--seeds", "3",
            "--M-grid", "0 1 2", "--snapshot", "yes", "--out", str(out)]
    assert cli.main(args) == 0
    snap = read_snapshot(out / "spins_3.snap")
    assert snap.kind == "spin" and snap.seed == 3 and snap.M == 2.0
    assert [r["M"] for r in _rows(out / "curve.csv")] == ["0.0", "1.0", "2.0"]


def test_other_engines_run(tmp_path):
    cases = [
        ["glauber-t", "--d", "2", "--N", "6", "--eps", "1", "--T", "0.5", "--M-lo", "-2", "--M-hi", "2", "--seeds", "0..1"],
        ["phase-scan", "--d", "2", "--N", "32", "--p-grid", "0.1 0.2", "--c", "1", "--seeds", "0..2"],
        ["bootstrap", "--d", "2", "--N", "24", "--p", "0.1", "--q", "0.01", "--seeds", "0..3", "--scales", "3 6"],
        ["renorm", "--d", "2", "--p", "0.2", "--q", "0.02", "--K", "4", "--D", "3", "--seeds", "0..3"],
        ["renorm", "--mode", "tiles", "--d", "2", "--N", "64", "--eps", "3", "--M", "2", "--seeds", "0..1"],
        ["selftest", "--seeds", "0..5"],
    ]
    names = ["samples.csv", "phase.csv", "summary.csv", "pn.csv", "renorm.csv", "selftest.csv"]
    for i, (args, name) in enumerate(zip(cases, names)):
        out = tmp_path / str(i)
        assert cli.main(args + ["--out", str(out)]) == 0, args
        rows = _rows(out / name)
        assert rows and all(r["config_hash"] for r in rows)
        assert (out / "config.ini").exists()


@pytest.mark.parametrize(
    "args",
    [
        ["glauber", "--d", "2"],
        ["nonsense"],
        ["glauber", "--d", "two", "--N", "4", "--eps", "1", "--M-end", "1", "--seeds", "0"],
        ["bootstrap", "--input", "/nonexistent/file.snap"],
        ["bootstrap", "--d", "2", "--N", "8"],
        ["bootstrap", "--d", "2", "--N", "8", "--p", "0.1", "--q", "0", "--seeds", "0", "--r", "3", "--modified", "true"],
        ["renorm", "--d", "2", "--seeds", "0", "--mode", "sideways"],
        ["gs-evolve", "--d", "2", "--eps", "1", "--seeds", "0"],
        ["phase-scan", "--d", "2", "--N", "8", "--p-grid", "0.1", "--c", "1", "--seeds", "5..2"],
    ],
)
def test_usage_errors_exit_1(tmp_path, args):
    assert cli.main(args + ["--out", str(tmp_path / "o")]) == 1


def test_bad_snapshot_is_usage_error(tmp_path):
    bad = tmp_path / "bad.snap"
    bad.write_bytes(b"garbage" * 20)
    assert cli.main(["bootstrap", "--input", str(bad), "--out", str(tmp_path / "o")]) == 1


def test_invariant_violation_exit_2(tmp_path, monkeypatch):
    monkeypatch.setattr(cli.bp, "u_monitor", lambda trace: False)
    args = ["bootstrap", "--d", "2", "--N", "16", "--p", "0.1", "--q", "0", "--seeds", "0", "--out", str(tmp_path / "o")]
    assert cli.main(args) == 2


def test_console_entry_point(tmp_path):
    ok = subprocess.run(
        [sys.executable, "-m", "rfimlab", "selftest", "--seeds", "0..2", "--out", str(tmp_path / "s")],
        capture_output=True, text=True,
    )
    assert ok.returncode == 0, ok.stderr
    bad = subprocess.run([sys.executable, "-m", "rfimlab", "glauber"], capture_output=True, text=True)
    assert bad.returncode == 1 and "needs" in bad.stderr


def test_config_file_sections_and_overrides(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[common]\nd = 2\nseeds = 0..3\n\n[glauber]\nN = 8\neps = 0.5\nM_end = 2.0\n")
    cfg = load_config("glauber", str(ini), {"eps": "1.5"})
    assert cfg["d"] == 2 and cfg["N"] == 8 and cfg["eps"] == 1.5 and cfg["seeds"] == [0, 1, 2, 3]
    assert cfg["check_nesting"] is False
    # the echoed config reloads to the same hash
    echo = tmp_path / "echo.ini"
    echo.write_text(cfg.to_ini())
    assert load_config("glauber", str(echo)).config_hash == cfg.config_hash
    with pytest.raises(ConfigError):
        load_config("glauber", str(ini), {"colour": "red"})
    with pytest.raises(ConfigError):
        load_config("glauber", str(tmp_path / "missing.ini"))


def test_config_hash_and_workers(monkeypatch):
    a = ExperimentConfig("phase-scan", {"d": 2, "workers": 1})
    b = ExperimentConfig("phase-scan", {"d": 2, "workers": 4})
    c = ExperimentConfig("phase-scan", {"d": 3, "workers": 1})
    assert a.config_hash == b.config_hash != c.config_hash
    monkeypatch.setenv("RFIMLAB_WORKERS", "3")
    assert ExperimentConfig("glauber", {}).workers == 3
    assert b.workers == 4
    with pytest.raises(ConfigError):
        ExperimentConfig("glauber", {"workers": 0}).workers


def test_seed_parsing():
    assert parse_seeds("0..3") == [0, 1, 2, 3]
    assert parse_seeds("1, 5 0x10") == [1, 5, 16]
    with pytest.raises(ValueError):
        parse_seeds("")


@pytest.mark.parametrize(
    "args,name",
    [
        (["phase-scan", "--d", "2", "--N", "64", "--p-grid", "0.06 0.1", "--c", "4", "--seeds", "0..5"], "phase.csv"),
        (["gs-evolve", "--d", "2", "--sizes", "4 5", "--eps", "1", "--seeds", "0..3", "--tol", "1e-6"], "avalanches.csv"),
        (["glauber", "--d", "2", "--N", "32", "--eps", "1", "--M-end", "3", "--M-grid", "0 1 2 3", "--seeds", "0..3"], "curve.csv"),
    ],
)
def test_worker_count_does_not_change_output(tmp_path, args, name):
    bodies = []
    for workers in ("1", "2"):
        out = tmp_path / workers
        assert cli.main(args + ["--workers", workers, "--out", str(out)]) == 0
        bodies.append((out / name).read_bytes())
    assert bodies[0] == bodies[1]
