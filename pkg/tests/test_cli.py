import filecmp
import json
import os
import subprocess
import sys

import pytest

from noiselock.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_OK, main
from noiselock.config import emit_config
from noiselock.presets import _with, get_preset


def _small_sweep(**tol):
    cfg = _with(get_preset("squeezed"), run={"n_points": 4, "duration": 0.003, "settle": 2e-4})
    if tol:
        cfg = _with(cfg, tolerances=tol)
    return emit_config(cfg)


@pytest.fixture
def sweep_file(tmp_path):
    p = tmp_path / "sweep.ini"
    p.write_text(_small_sweep())
    return str(p)


def test_run_config_file_ok(sweep_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", sweep_file, "--out", str(out)]) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["passed"] and summary["scale_factor"] == 0.01
    assert {"sweep.csv", "sweep_error.svg", "sweep_variance.svg"} <= set(summary["files"])
    header = [ln for ln in (out / "sweep.csv").read_text().splitlines() if ln.startswith("#")]
    keys = {ln[1:].split("=")[0].strip() for ln in header}
    assert {"config_hash", "seed", "version", "scale_factor"} <= keys
    assert "PASS" in capsys.readouterr().out


def test_identical_invocations_are_byte_identical(sweep_file, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", sweep_file, "--out", str(a), "--seed", "7"]) == EXIT_OK
    assert main(["run", sweep_file, "--out", str(b), "--seed", "7"]) == EXIT_OK
    names = sorted(os.listdir(a))
    assert names == sorted(os.listdir(b))
    match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    assert not mismatch and not errors


def test_seed_override_changes_output(sweep_file, tmp_path):
    main(["run", sweep_file, "--out", str(tmp_path / "a"), "--seed", "1"])
    main(["run", sweep_file, "--out", str(tmp_path / "b"), "--seed", "2"])
    assert (tmp_path / "a" / "sweep.csv").read_text() != (tmp_path / "b" / "sweep.csv").read_text()


def test_failed_verdict_exits_one(tmp_path):
    p = tmp_path / "strict.ini"
    p.write_text(_small_sweep(shape_residual=1e-9))
    assert main(["run", str(p), "--out", str(tmp_path / "o")]) == EXIT_FAIL


def test_config_errors_exit_two(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[plant]\nloss_lambda = 1.5\n")
    assert main(["run", str(bad)]) == EXIT_CONFIG
    assert "line 2" in capsys.readouterr().err
    assert main(["run", "no-such-preset"]) == EXIT_CONFIG
    assert main(["run", "fig3", "--scale", "2"]) == EXIT_CONFIG
    assert main(["selftest", "--criteria", "one"]) == EXIT_CONFIG


def test_scale_override_is_recorded(tmp_path):
    out = tmp_path / "o"
    assert main(["run", "fig3", "--scale", "0.02", "--out", str(out)]) == EXIT_OK
    assert json.loads((out / "summary.json").read_text())["scale_factor"] == 0.02


def test_show_prints_config(capsys):
    assert main(["show", "fig8"]) == EXIT_OK
    text = capsys.readouterr().out
    assert "[lockin]" in text and "slope = 12" in text


def test_selftest_subset(capsys):
    assert main(["selftest", "--criteria", "1,12"]) == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("criterion  1 [PASS]")
    assert out[1].startswith("criterion 12 [PASS]")
    assert out[-1] == "2/2 criteria passed"


def test_console_entry_point(tmp_path):
    res = subprocess.run(
        [sys.executable, "-m", "noiselock.cli", "run", "fig3", "--out", str(tmp_path / "o")],
        capture_output=True,
        text=True,
    )
    assert res.returncode == 0, res.stderr
    res = subprocess.run([sys.executable, "-m", "noiselock.cli", "run", "nope"], capture_output=True, text=True)
    assert res.returncode == 2
