import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from sklearn.base import clone

from noiselock import rng
from noiselock.dsp import (
    BandpassConfig,
    BandpassFilter,
    DspChainConfig,
    EnvelopeConfig,
    EnvelopeDetector,
    ErrorSignalFit,
    LockInAmplifier,
    LockInConfig,
    band_power,
    bandpass,
    envelope_detect,
    lock_in,
    lowpass_sos,
    welch_psd,
)

FS = 1e6
T = np.arange(200_000) / FS


def _amp(y):
    tail = y[len(y) // 2 :]
    return math.sqrt(2) * tail.std()


def test_bandpass_centre_gain():
    bpf = BandpassFilter(FS, 10e3, 300e3).fit()
    assert abs(bpf.frequency_response([bpf.center_frequency])[0]) == pytest.approx(1.0, rel=1e-12)
    y = bpf.transform(np.sin(2 * np.pi * bpf.center_frequency * T))
    assert abs(20 * math.log10(_amp(y))) < 1.0


def test_bandpass_rollup_attenuation():
    bpf = BandpassFilter(FS, 10e3, 300e3).fit()
    h = abs(bpf.frequency_response([1e3])[0])
    assert 20 * math.log10(h) <= -55
    y = bpf.transform(np.sin(2 * np.pi * 1e3 * T))
    assert 20 * math.log10(_amp(y)) <= -55


def test_bandpass_kills_dc():
    y = BandpassFilter(FS, 10e3, 300e3).fit().transform(np.ones(100_000))
    assert abs(y[-1]) < 1e-9


def test_bandpass_rejects_bad_corners():
    for lo, hi in ((0, 1e3), (2e3, 1e3), (1e3, 6e5)):
        with pytest.raises(ValueError):
            BandpassFilter(FS, lo, hi).fit()
    with pytest.raises(ValueError):
        BandpassFilter(FS, 1e3, 1e4, mode="brick").fit()


def test_ideal_bandpass_is_brick_wall():
    n = 1 << 14
    bpf = BandpassFilter(FS, 50e3, 100e3, mode="ideal").fit()
    k = np.arange(n)
    f_in = 75e3 * n / FS
    f_out = 20e3 * n / FS
    x = np.sin(2 * np.pi * round(f_in) * k / n) + np.sin(2 * np.pi * round(f_out) * k / n)
    y = bpf.transform(x)
    assert np.allclose(y, np.sin(2 * np.pi * round(f_in) * k / n), atol=1e-9)
    assert bpf.independent_bandwidth() == pytest.approx(50e3)


def test_bandwidth_measures():
    bpf = BandpassFilter(FS, 10e3, 300e3).fit()
    neb = bpf.noise_bandwidth()
    assert 290e3 - 10e3 < neb < 400e3
    assert bpf.independent_bandwidth() > neb * 0.5


def test_envelope_sine_calibration():
    for a in (0.1, 1.0, 7.0):
        y = EnvelopeDetector(FS, cutoff=1e3, law="linear").fit().transform(a * np.sin(2 * np.pi * 50e3 * T))
        assert y[len(y) // 2 :].mean() == pytest.approx(a, rel=0.02)


def test_envelope_zero_and_gaussian_offset():
    assert np.all(EnvelopeDetector(FS, 1e3).fit().transform(np.zeros(1000)) == 0)
    sigma = 0.8
    x = sigma * rng.standard_normal(4, 1_000_000)
    y = EnvelopeDetector(FS, 1e3, law="linear").fit().transform(x)
    assert y[100_000:].mean() == pytest.approx(sigma * math.sqrt(math.pi / 2), rel=0.01)
    assert sigma * math.sqrt(math.pi / 2) == pytest.approx(1.2533 * sigma, rel=1e-4)


def test_square_law_reads_mean_power():
    x = 0.5 * rng.standard_normal(5, 500_000)
    y = EnvelopeDetector(FS, 1e3, law="square").fit().transform(x)
    assert y[100_000:].mean() == pytest.approx(0.25, rel=0.01)


def test_lockin_examples():
    f_ref, m = 2e3, 0.3
    lia = LockInAmplifier(FS, f_ref, 0.0, 5e-3, 12).fit()
    y = lia.transform(m * np.sin(2 * np.pi * f_ref * T))
    assert y[len(y) // 2 :].mean() == pytest.approx(m, rel=0.01)
    lia.fit()
    y = lia.transform(m * np.cos(2 * np.pi * f_ref * T))
    assert abs(y[len(y) // 2 :].mean()) < 0.01 * m
    x = rng.standard_normal(8, 50_000)
    a = LockInAmplifier(FS, f_ref, 0.3, 5e-3).fit().transform(x)
    b = LockInAmplifier(FS, f_ref, 0.3 + math.pi, 5e-3).fit().transform(x)
    assert np.allclose(a, -b, atol=1e-12)


def test_lockin_rejects_corner_above_reference():
    with pytest.raises(ValueError):
        LockInAmplifier(FS, 100.0, 0.0, 1e-4).fit()
    with pytest.warns(UserWarning):
        LockInAmplifier(FS, 1000.0, 0.0, 1e-3).fit()
    with pytest.raises(ValueError):
        lowpass_sos(1e-3, FS, 18)


def test_welch_white_noise_flat():
    x = rng.standard_normal(12, 1_000_000)
    f, p = welch_psd(x, FS, segment=1024)
    mid = (f > 0.1 * FS / 2) & (f < 0.9 * FS / 2)
    assert np.max(np.abs(10 * np.log10(p[mid] / (2 / FS)))) <= 0.5
    assert np.sum(p) * (f[1] - f[0]) == pytest.approx(x.var(), rel=0.01)


def test_welch_sine_power_and_zero():
    a = 0.7
    n = 1 << 18
    x = a * np.sin(2 * np.pi * 123.4e3 * np.arange(n) / FS)
    f, p = welch_psd(x, FS, segment=1 << 14)
    assert band_power(f, p, 120e3, 127e3) == pytest.approx(a * a / 2, rel=0.03)
    assert np.all(welch_psd(np.zeros(4096), FS, segment=1024)[1] == 0)
    with pytest.raises(ValueError):
        welch_psd(np.array([]), FS)
    with pytest.raises(ValueError):
        welch_psd(np.zeros(10), FS, segment=20)


FILTERS = [
    lambda: BandpassFilter(FS, 10e3, 300e3),
    lambda: EnvelopeDetector(FS, 1e3, law="linear").set_params(law="square"),
    lambda: LockInAmplifier(FS, 2e3, 0.4, 5e-3, 6),
]
LINEAR_FILTERS = [FILTERS[0], FILTERS[2]]
signals = hnp.arrays(np.float64, st.integers(50, 400), elements=st.floats(-1e3, 1e3))


@pytest.mark.parametrize("make", LINEAR_FILTERS)
@given(x=signals, c=st.floats(-10, 10))
def test_linearity(make, x, c):
    rng_ = np.random.default_rng(len(x))
    y = rng_.standard_normal(len(x))
    f = make().fit()
    fx = f.fit().transform(x)
    fy = f.fit().transform(y)
    fxy = f.fit().transform(c * x + y)
    assert np.allclose(fxy, c * fx + fy, rtol=1e-9, atol=1e-9 * (1 + np.abs(x).max() * abs(c)))


@pytest.mark.parametrize("make", FILTERS)
@given(n=st.integers(20, 300), k=st.integers(0, 19))
def test_causality(make, n, k):
    x = np.zeros(n)
    x[k] = 1.0
    y = make().fit().transform(x)
    assert np.all(y[:k] == 0)


@pytest.mark.parametrize("make", FILTERS)
@given(x=signals, cut=st.integers(1, 49))
def test_streaming_equals_whole(make, x, cut):
    whole = make().fit().transform(x)
    f = make().fit()
    parts = np.concatenate([f.transform(x[:cut]), f.transform(x[cut:])])
    assert np.allclose(whole, parts, rtol=1e-12, atol=1e-12)


def test_time_invariance_bandpass():
    x = rng.standard_normal(1, 2000)
    f = BandpassFilter(FS, 10e3, 300e3)
    y = f.fit().transform(np.concatenate([np.zeros(100), x]))
    assert np.allclose(y[100:], f.fit().transform(x), atol=1e-12)


def test_two_dimensional_input():
    x = rng.standard_normal(2, 3000).reshape(1000, 3)
    f = BandpassFilter(FS, 10e3, 300e3)
    y = f.fit().transform(x)
    for j in range(3):
        assert np.allclose(y[:, j], f.fit().transform(x[:, j]))


def test_sklearn_protocol():
    f = LockInAmplifier(FS, 2e3, 0.1, 5e-3, 12)
    params = f.get_params()
    assert params == {"fs": FS, "ref_freq": 2e3, "ref_phase": 0.1, "time_constant": 5e-3, "slope": 12}
    g = clone(f)
    assert g.get_params() == params and not hasattr(g, "sos_")
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        g.transform(np.zeros(5))
    with pytest.raises(ValueError):
        BandpassFilter(FS, 1e3, 1e4).fit().transform(np.array([1.0, np.nan]))


def test_chain_pipeline_and_helpers():
    chain = DspChainConfig(BandpassConfig(10e3, 300e3), EnvelopeConfig(1e3), LockInConfig(5e-3, 12))
    pipe = chain.pipeline(FS, 2e3, 0.0)
    x = rng.standard_normal(3, 50_000)
    y = pipe.fit_transform(x)
    step = lock_in(envelope_detect(bandpass(x, chain.bandpass, FS), chain.envelope, FS), LockInConfig(5e-3, 12, 2e3), FS)
    assert np.allclose(y, step)
    with pytest.raises(ValueError):
        DspChainConfig(BandpassConfig(10e3, 300e3), EnvelopeConfig(20e3))
    with pytest.raises(ValueError):
        chain.validate(5e5, 2e3)
    phase = chain.compensating_phase(FS, 2e3)
    assert phase == pytest.approx(-math.atan(2e3 / 1e3), abs=1e-3)


@given(a=st.floats(0.1, 10) | st.floats(-10, -0.1), off=st.floats(-0.5, 0.5), harmonic=st.sampled_from([1, 2]))
def test_error_fit_recovers_curve(a, off, harmonic):
    theta = np.linspace(0, 2 * np.pi, 24, endpoint=False)
    eps = a * np.sin(harmonic * (theta - off))
    est = ErrorSignalFit(harmonic=harmonic, kind="sin").fit(theta, eps)
    assert est.predict(theta) == pytest.approx(eps, abs=1e-9)
    assert est.rms_residual_ < 1e-9
    crossings = est.zero_crossings()
    assert np.min(np.abs(np.angle(np.exp(1j * harmonic * (crossings - off))))) < 1e-9


def test_error_fit_gain_only():
    theta = np.linspace(0, np.pi, 24, endpoint=False)
    est = ErrorSignalFit(harmonic=1, kind="cos")
    a, rms, mx = est.fit_gain(theta, 3 * np.cos(theta))
    assert a == pytest.approx(3)
    assert rms < 1e-12 and mx < 1e-12
    with pytest.raises(ValueError):
        ErrorSignalFit(kind="tan").fit(theta, theta)
