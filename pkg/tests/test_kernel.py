"""The compiled loop kernel against the reference path: synthesize, then the sklearn pipeline."""

import math

import numpy as np
import pytest

from noiselock import _kernel
from noiselock.dsp import BandpassConfig, DspChainConfig, EnvelopeConfig, EnvelopeLaw, LockInConfig
from noiselock.loop import LoopSimulator
from noiselock.plant import CoherentPairSpec, DisturbanceSpec, ModulationSpec, Port, SqueezedStateSpec
from noiselock.timeseries import Mode, SynthesisConfig, synthesize

CHAIN = DspChainConfig(BandpassConfig(10e3, 300e3), EnvelopeConfig(1e3), LockInConfig(1e-2, 12))
MOD = ModulationSpec(theta0=0.3, theta1=0.1, omega_mod=2 * math.pi * 197.0)


def _reference(synth, chain, ref_phase):
    tr = synthesize(synth)
    x = tr["photocurrent"]
    bpf = chain.bandpass.build(synth.fs).fit().transform(x)
    env = chain.envelope.build(synth.fs).fit().transform(bpf)
    err = chain.lockin.build(synth.fs, synth.modulation.freq_hz, ref_phase).fit().transform(env)
    pipe = chain.pipeline(synth.fs, synth.modulation.freq_hz, ref_phase)
    assert np.array_equal(pipe.fit_transform(x), err)
    return tr["true_phase"], x, bpf, env, err


CASES = {
    "homodyne": SynthesisConfig(squeezed=SqueezedStateSpec(0.41), modulation=MOD, duration=0.3, seed=3),
    "homodyne_walk": SynthesisConfig(
        squeezed=SqueezedStateSpec(0.8, loss_lambda=0.2), modulation=MOD, duration=0.3, seed=4,
        disturbance=DisturbanceSpec.random_walk(0.5),
    ),
    "coherent": SynthesisConfig(
        mode=Mode.COHERENT, coherent=CoherentPairSpec.from_visibility(0.6, dc_scale=30.0), port=Port.D,
        modulation=MOD, duration=0.3, seed=5,
    ),
}  # fmt: skip


@pytest.mark.parametrize("name", list(CASES))
@pytest.mark.parametrize("law", [EnvelopeLaw.SQUARE, EnvelopeLaw.LINEAR])
def test_open_loop_kernel_matches_reference(name, law):
    synth = CASES[name]
    chain = DspChainConfig(CHAIN.bandpass, EnvelopeConfig(1e3, law), CHAIN.lockin)
    sim = LoopSimulator(synth, chain, None, record_every=1, steady_start=False)
    sim.advance(synth.n_samples)
    rec = sim.records()
    theta, x, bpf, env, err = _reference(synth, chain, sim.ref_phase)
    assert np.allclose(rec[:, _kernel.REC_THETA], theta, rtol=0, atol=1e-9)
    for col, ref in ((_kernel.REC_X, x), (_kernel.REC_BPF, bpf), (_kernel.REC_ENV, env), (_kernel.REC_ERR, err)):
        scale = np.max(np.abs(ref))
        assert np.max(np.abs(rec[:, col] - ref)) <= 1e-8 * scale
    assert np.all(rec[:, _kernel.REC_U] == 0)


def test_block_split_matches_single_run():
    synth = CASES["homodyne_walk"]
    a = LoopSimulator(synth, CHAIN, None, record_every=7, window_len=500)
    a.advance(synth.n_samples)
    b = LoopSimulator(synth, CHAIN, None, record_every=7, window_len=500)
    for n in (1, 999, 123_457, synth.n_samples - 1 - 999 - 123_457):
        b.advance(n)
    # the dither oscillator is re-seeded at block starts, so agreement is to rounding
    ra, rb = a.records(), b.records()
    assert ra.shape == rb.shape
    assert np.all(np.abs(ra - rb) <= 1e-10 * (1 + np.abs(ra).max(axis=0)))
    assert np.allclose(a.window_variances(), b.window_variances(), rtol=1e-12)
    assert np.array_equal(a.recorded_indices(), np.arange(len(a.records())) * 7)


def test_window_variances_match_numpy():
    synth = CASES["homodyne"]
    sim = LoopSimulator(synth, CHAIN, None, record_every=1, window_len=1000)
    sim.advance(synth.n_samples)
    bpf = sim.records()[:, _kernel.REC_BPF]
    m = len(bpf) // 1000
    ref = bpf[: m * 1000].reshape(m, 1000).var(axis=1, ddof=1)
    assert np.allclose(sim.window_variances(), ref, rtol=1e-8)


def test_steady_start_removes_dc_transient():
    synth = CASES["coherent"].replace(coherent=CoherentPairSpec.from_visibility(0.6, dc_scale=1e5))
    cold = LoopSimulator(synth, CHAIN, None, record_every=1, steady_start=False).advance(20_000).records()
    warm = LoopSimulator(synth, CHAIN, None, record_every=1).advance(20_000).records()
    # the first samples of a cold bandpass see the full DC step
    assert np.abs(cold[:50, _kernel.REC_BPF]).max() > 10 * np.abs(warm[:50, _kernel.REC_BPF]).max()


def test_simulator_trace_is_deterministic():
    synth = CASES["homodyne_walk"]
    a = LoopSimulator(synth, CHAIN, None, record_every=10).advance(50_000).trace()
    b = LoopSimulator(synth, CHAIN, None, record_every=10).advance(50_000).trace()
    for k in a.channels:
        assert np.array_equal(a[k], b[k])
    assert a.fs == synth.fs / 10
