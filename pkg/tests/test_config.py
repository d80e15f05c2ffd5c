import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from noiselock.config import ConfigError, ExperimentConfig, ExperimentKind, emit_config, load_config, parse_config
from noiselock.loop import ErrorSource
from noiselock.presets import PRESETS, _with, get_preset, preset_text


def test_empty_file_gives_defaults():
    cfg = parse_config("")
    assert cfg == ExperimentConfig().validate()
    assert cfg.experiment.scale_factor == 0.01
    assert cfg.plant.squeeze_factor == 0.41
    assert cfg.modulation.freq_hz == 19.7e3
    assert (cfg.bandpass.f_low, cfg.bandpass.f_high) == (1e6, 30e6)


def test_loss_out_of_range_names_field_and_bound():
    text = "[experiment]\nkind = sweep_theta\n[plant]\nloss_lambda = 1.5\n"
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.line == 4
    msg = str(exc.value)
    assert "loss_lambda" in msg and "[0, 1)" in msg and msg.startswith("line 4:")


@pytest.mark.parametrize(
    "text,line,fragment",
    [
        ("[plant]\nsqueeze = 1\n", 2, "unknown key"),
        ("[plants]\n", 1, "unknown section"),
        ("x = 1\n", 1, "outside"),
        ("[plant]\nsqueeze_factor 1\n", 2, "key = value"),
        ("[plant]\nsqueeze_factor = abc\n", 2, "squeeze"),
        ("[plant]\nmode = laser\n", 2, "expected one of"),
        ("[run]\nn_seeds = 2.5\n", 2, "integer"),
        ("[plant]\nvisibility = 0.5\nvisibility = 0.6\n", 3, "duplicate"),
        ("[plant\n", 1, "malformed"),
        ("[lockin]\nslope = 9\n", 2, "slope"),
    ],
)
def test_line_numbered_errors(text, line, fragment):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.line == line
    assert fragment in str(exc.value)


def test_cross_field_validation():
    # the bandpass upper corner above the scaled Nyquist rate
    with pytest.raises(ConfigError):
        parse_config("[bandpass]\nf_high = 80e6\n")
    with pytest.raises(ConfigError):
        parse_config("[bandpass]\nf_low = 5e6\nf_high = 2e6\n")


def test_fig8_preset_values():
    cfg = get_preset("fig8")
    synth = cfg.synthesis()
    chain = cfg.chain()
    s = cfg.scale
    assert synth.modulation.freq_hz == pytest.approx(19.7e3 * s)
    assert chain.bandpass.f_low == pytest.approx(1e6 * s)
    assert chain.bandpass.f_high == pytest.approx(30e6 * s)
    assert chain.lockin.time_constant == pytest.approx(100e-6 / s)
    assert chain.lockin.slope == 12
    assert cfg.experiment.kind is ExperimentKind.SPECTRUM_INLOOP
    v = synth.variances()
    assert 10 * math.log10(v.v1) == pytest.approx(-1.0, abs=1e-9)
    assert 10 * math.log10(v.v2) == pytest.approx(5.0, abs=1e-9)


def test_fig8_file_parses(tmp_path):
    path = tmp_path / "fig8.ini"
    path.write_text(preset_text("fig8"))
    assert load_config(path) == get_preset("fig8")


@pytest.mark.parametrize("name", list(PRESETS))
def test_presets_round_trip(name):
    cfg = get_preset(name)
    text = emit_config(cfg)
    assert parse_config(text) == cfg
    assert emit_config(parse_config(text)) == text


@given(
    name=st.sampled_from(["squeezed", "fig2", "fig6", "fig8", "acquire"]),
    seed=st.integers(0, 2**31),
    r=st.floats(0.0, 3.0),
    lam=st.floats(0.0, 0.99),
    theta0=st.floats(-10, 10),
    theta1=st.floats(0.0, 0.5),
    vis=st.floats(0.0, 1.0),
    duration=st.floats(1e-4, 10.0),
)
def test_round_trip_property(name, seed, r, lam, theta0, theta1, vis, duration):
    cfg = _with(
        get_preset(name),
        experiment={"seed": seed},
        plant={"squeeze_factor": r, "loss_lambda": lam, "visibility": vis},
        modulation={"theta0": theta0, "theta1": theta1},
        run={"duration": duration},
    )
    back = parse_config(emit_config(cfg))
    assert back == cfg


def test_scaling_rules():
    cfg = _with(get_preset("fig6"), experiment={"scale_factor": 0.04})
    synth = cfg.synthesis()
    assert synth.fs == pytest.approx(100e6 * 0.04)
    assert cfg.duration == pytest.approx(cfg.run.duration / 0.04)
    assert synth.coherent.dc_scale == pytest.approx(cfg.plant.dc_scale * math.sqrt(0.04))
    cfg2 = _with(get_preset("acquire"), experiment={"scale_factor": 0.02})
    assert cfg2.synthesis().disturbance.diffusion == pytest.approx(cfg2.disturbance.diffusion * 0.02)


def test_servo_config_auto_and_override():
    cfg = get_preset("squeezed")
    synth, chain = cfg.synthesis(), cfg.chain()
    auto = cfg.servo_config(synth, chain)
    assert auto.ugf_hz == pytest.approx(cfg.servo.ugf_hz * cfg.scale)
    fixed = _with(cfg, servo={"kp": 0.5, "ki": 2.0, "sign": -1}).servo_config(synth, chain)
    assert (fixed.kp, fixed.ki, fixed.sign) == (0.5, 2.0, -1)
    assert get_preset("fig6").servo.error_source is ErrorSource.CML


def test_unknown_preset():
    with pytest.raises(KeyError):
        get_preset("fig99")
