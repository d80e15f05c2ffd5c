import json
import math

import numpy as np
import pytest

from noiselock.config import ExperimentKind
from noiselock.experiments import (
    compute,
    expected_crossings,
    fit_error_curve,
    loop_suppression_db,
    run_experiment,
    theta_grid,
    write_csv,
)
from noiselock.presets import _with, get_preset


def test_verdicts_follow_declared_tolerances():
    cfg = get_preset("fig3")
    assert compute(cfg).passed
    cfg = _with(get_preset("squeezed"), run={"n_points": 4, "duration": 0.003, "settle": 2e-4})
    loose = compute(cfg)
    strict = compute(_with(cfg, tolerances={"zero_crossing": 1e-12}))
    assert loose.passed and not strict.passed
    names = {v.name for v in strict.verdicts if not v.passed}
    assert names == {"zero_crossings"}
    v = next(v for v in strict.verdicts if v.name == "zero_crossings")
    assert "1e-12" in v.tolerance


def test_fit_error_curve_on_exact_shapes():
    cfg = get_preset("squeezed")
    synth = cfg.synthesis()
    theta = theta_grid(synth, 24)
    fit = fit_error_curve(synth, theta, -2.5 * np.sin(2 * theta))
    assert fit["gain"] == pytest.approx(-2.5)
    assert fit["rms_residual"] < 1e-12 and fit["crossing_error"] < 1e-9
    assert expected_crossings(synth) == pytest.approx([0.0, math.pi / 2])
    coh = get_preset("fig6").synthesis()
    th = theta_grid(coh, 24)
    fit = fit_error_curve(coh, th, 0.7 * np.cos(th))
    assert fit["crossing_error"] < 1e-9
    assert expected_crossings(coh) == pytest.approx([math.pi / 2, 3 * math.pi / 2])


def test_loop_suppression_metric():
    f = np.linspace(0, 100, 201)
    p = np.where(f < 10, 0.01, 1.0)
    assert loop_suppression_db(f, p, 10.0) == pytest.approx(20.0)
    assert math.isnan(loop_suppression_db(f, p, 1000.0))


def test_write_csv_is_deterministic(tmp_path):
    cols = {"a": np.array([1.0, 2.0]), "b": np.array([0.1, np.pi])}
    write_csv(tmp_path / "x.csv", cols, {"z": 1, "a": "q"})
    text = (tmp_path / "x.csv").read_text()
    assert text.splitlines()[:3] == ["# a = q", "# z = 1", "a,b"]
    assert "3.14159265359" in text


def test_summary_is_complete(tmp_path):
    cfg = get_preset("fig3")
    s = run_experiment(cfg, tmp_path, "fig3")
    on_disk = json.loads((tmp_path / "summary.json").read_text())
    assert on_disk == json.loads(json.dumps(s))
    for key in ("config_hash", "seed", "scale_factor", "version", "verdicts", "metrics", "fs_hz"):
        assert key in on_disk
    assert on_disk["experiment"] == ExperimentKind.STABILITY_VS_R.value


def test_analytic_stability_table_ordering():
    res = compute(get_preset("fig3"))
    cols, _ = res.tables["stability_vs_R"]
    for lam in (0.0, 0.1, 0.5):
        assert np.all(cols[f"squeezed_lambda_{lam:g}"] < cols[f"anti_lambda_{lam:g}"])
    assert np.all(cols["squeezed_lambda_0.5"] > cols["squeezed_lambda_0"])


def test_single_lock_trace_preset_runs(tmp_path):
    cfg = _with(get_preset("fig4"), run={"duration": 0.3}, servo={"engage_time": 0.1})
    s = run_experiment(cfg, tmp_path, "fig4")
    assert "lock_trace.csv" in s["files"] or any(f.endswith(".csv") for f in s["files"])
