"""Feedback loop: servo, phase actuator, lock acquisition and stability.

The loop runs sample by sample in a compiled kernel (see ``_kernel``) with
one sample of actuator latency. Phase residuals are reported three ways:

* ``residual_rms_true``: RMS of the true phase about the lock point with the
  known dither removed (only available in simulation);
* ``residual_rms_inloop``: error-point RMS divided by the predicted slope;
* ``measure_stability``: the noise on the detected noise power converted to
  phase through the curvature of the power at the lock point. This is the
  quantity the analytic stability formulas predict.
"""

import dataclasses
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import signal

from . import _kernel, rng
from .analytic import ErrorSignalCurve, LockPoint, bessel_j0_j1
from .dsp import DspChainConfig, EnvelopeLaw, LockInConfig, lowpass_sos, welch_psd
from .plant import CoherentPairSpec, DisturbanceGenerator, DisturbanceKind, DisturbanceSpec, Port
from .timeseries import ClassicalNoiseGenerator, Mode, SimTrace, SynthesisConfig

BLOCK = 1 << 17


class ErrorSource(str, Enum):
    NL = "nl"
    CML = "cml"


@dataclass(frozen=True)
class ServoConfig:
    """Proportional-integral servo driving the phase actuator.

    ``control = sign * (kp * e + ki * integral(e))``, clipped to ``+-limit``
    radians. ``ugf_hz`` records the unity-gain frequency the gains were
    designed for. Before ``engage_time`` the actuator holds its initial value.
    A non-zero ``ramp_rate`` (rad/s) sweeps the actuator until the error signal
    crosses zero with a restoring slope, then closes the loop.
    """

    kp: float = 0.0
    ki: float = 0.0
    sign: int = 1
    limit: float = 100.0
    ugf_hz: float | None = None
    engage_time: float = 0.0
    error_source: ErrorSource = ErrorSource.NL
    ramp_rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "error_source", ErrorSource(self.error_source))
        if self.sign not in (1, -1):
            raise ValueError(f"servo sign must be +1 or -1, got {self.sign}")
        if not (math.isfinite(self.kp) and math.isfinite(self.ki)):
            raise ValueError("servo gains must be finite")
        if not self.limit > 0:
            raise ValueError("servo limit must be > 0")
        if self.engage_time < 0:
            raise ValueError("engage_time must be >= 0")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass
class LockReport:
    acquired: bool
    acquisition_time: float
    lock_point: float
    final_phase: float
    residual_rms_true: float
    residual_rms_inloop: float
    threshold: float
    error_signal_psd: tuple = field(default=(np.array([]), np.array([])), repr=False)

    def __post_init__(self):
        if self.acquired and not abs(self.final_phase - self.lock_point) < self.threshold:
            raise ValueError("an acquired lock must end within the threshold of its lock point")

    def to_text(self):
        """Flat ``key = value`` block; spectra are written separately."""
        lines = []
        for f in dataclasses.fields(self):
            if f.name == "error_signal_psd":
                continue
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {format(v, '.9g') if isinstance(v, float) else v}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- analytic model of the chain


def _resolve_ref_phase(synth, chain):
    mod = synth.modulation
    if mod.demod_phase is None:
        return chain.compensating_phase(synth.fs, mod.freq_hz)
    return mod.demod_phase


def _noise_bandwidth(synth, chain):
    return chain.bandpass.build(synth.fs).fit().noise_bandwidth()


def _dither_amplitude(coeffs, theta0, theta1):
    """Amplitude of the sin(Omega t) component of ``p1 sin(t) + p2 cos(2t)`` under dither."""
    _, _, p0, p1, p2 = coeffs
    j1a = bessel_j0_j1(theta1)[1]
    j1b = bessel_j0_j1(2 * theta1)[1]
    amp = 2 * p1 * j1a * np.cos(theta0) - 2 * p2 * j1b * np.sin(2 * theta0)
    mean = p0 + p1 * np.sin(theta0) + p2 * np.cos(2 * theta0)
    return amp, np.maximum(mean, 1e-300)


def predicted_error(synth, chain, theta0, ref_phase=None):
    """Steady-state NL error signal the chain produces at average phase ``theta0``.

    Exact in the dither depth for the square-law detector; first order for the
    linear (rectifier) law.
    """
    fs, fmod = synth.fs, synth.modulation.freq_hz
    ref = _resolve_ref_phase(synth, chain) if ref_phase is None else ref_phase
    h = chain.envelope_response(fs, fmod)
    det = chain.envelope.build(fs)
    neb = _noise_bandwidth(synth, chain)
    amp, mean = _dither_amplitude(synth.plant_coefficients(), np.asarray(theta0, float), synth.modulation.theta1)
    k = abs(h) * math.cos(np.angle(h) - ref) * det.gain
    if chain.envelope.law is EnvelopeLaw.SQUARE:
        return k * neb * amp
    return k * math.sqrt(2 * neb / math.pi) * amp / (2 * np.sqrt(mean))


def predicted_cml_error(synth, theta0, ref_phase=0.0):
    """Idealised coherent-modulation error from the complementary port's mean photocurrent."""
    aux = _aux_coefficients(synth)
    _, j1 = bessel_j0_j1(synth.modulation.theta1)
    return 2 * aux[1] * j1 * np.cos(np.asarray(theta0, float)) * math.cos(ref_phase)


def _aux_coefficients(synth):
    if synth.mode is not Mode.COHERENT:
        raise ValueError("the coherent modulation readout needs a coherent plant")
    other = Port.C if synth.port is Port.D else Port.D
    return synth.replace(port=other).plant_coefficients()


def error_function(synth, chain, source=ErrorSource.NL, ref_phase=None, cml_ref_phase=0.0):
    if ErrorSource(source) is ErrorSource.CML:
        return lambda th: predicted_cml_error(synth, th, cml_ref_phase)
    ref = _resolve_ref_phase(synth, chain) if ref_phase is None else ref_phase
    return lambda th: predicted_error(synth, chain, th, ref)


def predicted_slope(synth, chain, theta, source=ErrorSource.NL, ref_phase=None, h=1e-5):
    f = error_function(synth, chain, source, ref_phase)
    return float((f(theta + h) - f(theta - h)) / (2 * h))


def lock_period(synth):
    return math.pi if synth.mode is Mode.HOMODYNE else 2 * math.pi


def target_phase(synth, lock_point):
    """Phase in ``[0, period)`` of a named lock point for this plant."""
    lock_point = LockPoint(lock_point)
    th = np.linspace(0, lock_period(synth), 4001)[:-1]
    _, _, p0, p1, p2 = synth.plant_coefficients()
    var = p0 + p1 * np.sin(th) + p2 * np.cos(2 * th)
    if synth.mode is Mode.HOMODYNE:
        if lock_point not in (LockPoint.SQUEEZED, LockPoint.ANTI_SQUEEZED):
            raise ValueError(f"{lock_point.value} is not a homodyne lock point")
        pick = np.argmin if lock_point is LockPoint.SQUEEZED else np.argmax
    else:
        if lock_point not in (LockPoint.DARK_FRINGE, LockPoint.BRIGHT_FRINGE):
            raise ValueError(f"{lock_point.value} is not a fringe lock point")
        pick = np.argmin if lock_point is LockPoint.DARK_FRINGE else np.argmax
    i = int(pick(var))
    # refine to the exact extremum of a sin / cos(2t) fringe
    step = math.pi / 2 if synth.mode is Mode.HOMODYNE else math.pi / 2
    return float(np.round(th[i] / step) * step % lock_period(synth))


def stable_lock_points(synth, chain, servo):
    """Zero crossings of the error signal where the loop restores the phase."""
    src = servo.error_source
    f = error_function(synth, chain, src)
    period = lock_period(synth)
    th = np.linspace(0, period, 2049)
    e = f(th)
    pts = []
    for i in range(len(th) - 1):
        if e[i] == 0 or e[i] * e[i + 1] < 0:
            z = th[i] if e[i] == 0 else th[i] - e[i] * (th[i + 1] - th[i]) / (e[i + 1] - e[i])
            if servo.sign * predicted_slope(synth, chain, z, src) < 0:
                pts.append(z % period)
    return sorted(set(np.round(pts, 9)))


def design_servo(synth, chain, ugf_hz, lock_point, *, source=ErrorSource.NL, pi_corner_ratio=10.0, **extra):
    """PI gains giving unity loop gain at ``ugf_hz`` for the named lock point.

    The plant (error slope times lock-in low-pass) is flat well below the
    lock-in corner, so the loop is integrator-dominated: the PI zero sits at
    ``pi_corner_ratio * ugf_hz`` and the proportional path only limits the
    phase lag near the lock-in corner. The lock-in response at the unity-gain
    frequency is compensated in magnitude.
    """
    theta = target_phase(synth, lock_point)
    slope = predicted_slope(synth, chain, theta, source)
    if slope == 0:
        raise ValueError("the error signal has zero slope at this lock point")
    fs = synth.fs
    sos = lowpass_sos(chain.lockin.time_constant, fs, chain.lockin.slope)
    _, h = signal.sosfreqz(sos, worN=[ugf_hz], fs=fs)
    w = 2 * math.pi * ugf_hz
    wz = pi_corner_ratio * w
    c = abs(1 / wz + 1 / (1j * w))
    ki = 1.0 / (abs(slope) * abs(h[0]) * c)
    kp = ki / wz
    sign = -1 if slope > 0 else 1
    return ServoConfig(kp=float(kp), ki=float(ki), sign=sign, ugf_hz=ugf_hz, error_source=source, **extra)


# ---------------------------------------------------------------- simulation


class LoopSimulator:
    """Streams a closed (or open) loop run in blocks.

    Parameters
    ----------
    synth : SynthesisConfig
    chain : DspChainConfig
    servo : ServoConfig or None
        ``None`` runs open loop with the actuator parked at ``initial_control``.
    record_every : int
        Keep every n-th sample of each channel (0 records nothing).
    window_len : int
        If > 0, accumulate ``(sum, sum of squares)`` of the bandpass output
        over consecutive windows of this many samples.
    with_cml : bool
        Also synthesise the complementary port and demodulate its mean
        (implied when the servo uses the CML error).
    steady_start : bool
        Start the bandpass in its steady state for the initial mean
        photocurrent. Without it a bright fringe's DC step rings through the
        square-law detector and takes many lock-in time constants to decay.
    """

    def __init__(
        self,
        synth,
        chain,
        servo=None,
        *,
        record_every=1,
        window_len=0,
        with_cml=False,
        initial_control=0.0,
        cml_ref_phase=0.0,
        steady_start=True,
    ):
        fs = synth.fs
        mod = synth.modulation
        chain.validate(fs, mod.freq_hz)
        self.synth, self.chain, self.servo = synth, chain, servo
        self.fs = fs
        self.ref_phase = _resolve_ref_phase(synth, chain)
        self.cml_ref_phase = cml_ref_phase
        self.record_every = int(record_every)
        self.window_len = int(window_len)
        self.with_cml = with_cml or (servo is not None and servo.error_source is ErrorSource.CML)
        self.steady_start = steady_start

        self._bpf_sos = np.ascontiguousarray(chain.bandpass.build(fs).fit().sos_)
        self._env_sos = np.ascontiguousarray(chain.envelope.build(fs).fit().sos_)
        self._env_gain = chain.envelope.build(fs).gain
        self._env_square = chain.envelope.law is EnvelopeLaw.SQUARE
        self._lia_sos = np.ascontiguousarray(lowpass_sos(chain.lockin.time_constant, fs, chain.lockin.slope))
        self._bpf_z = np.zeros((self._bpf_sos.shape[0], 2))
        self._env_z = np.zeros((1, 2))
        self._lia_z = np.zeros((self._lia_sos.shape[0], 2))
        self._aux_z = np.zeros((self._lia_sos.shape[0], 2))

        self._plant = np.array(list(synth.plant_coefficients()) + [math.sqrt(fs / 2)])
        self._plant_aux = np.array(list(_aux_coefficients(synth)) if self.with_cml else [0.0] * 5)

        p = np.zeros(_kernel.N_SERVO_PARAMS)
        if servo is None:
            p[_kernel.ENGAGE] = np.inf
            p[_kernel.SIGN] = 1.0
            p[_kernel.LIMIT] = np.inf
        else:
            p[_kernel.KP] = servo.kp
            p[_kernel.KI_DT] = servo.ki / fs
            p[_kernel.SIGN] = servo.sign
            p[_kernel.LIMIT] = servo.limit
            p[_kernel.ENGAGE] = round(servo.engage_time * fs)
            p[_kernel.SOURCE] = 1.0 if servo.error_source is ErrorSource.CML else 0.0
            p[_kernel.RAMP_DT] = servo.ramp_rate / fs
        p[_kernel.HOLD] = initial_control
        self._servo = p
        self._sstate = np.zeros(_kernel.N_SERVO_STATE)
        self._sstate[_kernel.U] = initial_control
        self._sstate[_kernel.INTEG] = initial_control * p[_kernel.SIGN]

        self._dist = DisturbanceGenerator(synth.disturbance, fs, synth.seed)
        self._has_dist = synth.disturbance.kind is not DisturbanceKind.NONE
        self._phase = np.array(
            [mod.theta0, mod.theta1, mod.omega_mod / fs, self.ref_phase, self.cml_ref_phase]
        )
        self._classical = None
        if synth.classical_level > 0:
            self._classical = ClassicalNoiseGenerator(synth.classical_level, synth.classical_ref_freq, fs, synth.seed)
        self._win_acc = np.zeros(3)
        self.position = 0
        self._records = []
        self._windows = []

    def advance(self, n):
        """Run ``n`` more samples."""
        remaining = int(n)
        while remaining > 0:
            m = min(BLOCK, remaining)
            self._step(m)
            remaining -= m
        return self

    def _step(self, m):
        synth, fs, k0 = self.synth, self.fs, self.position
        mod = synth.modulation
        if k0 == 0 and self.steady_start:
            th0 = mod.theta0 + self._sstate[_kernel.U]
            m0, m1 = self._plant[0], self._plant[1]
            self._bpf_z[:] = signal.sosfilt_zi(self._bpf_sos) * (m0 + m1 * math.sin(th0))
        dist = self._dist.next(m) if self._has_dist else np.empty(0)
        g = rng.standard_normal(synth.seed, m, stream=rng.STREAM_PHOTOCURRENT, start=k0)
        g_aux = (
            rng.standard_normal(synth.seed, m, stream=rng.STREAM_AUX_DETECTOR, start=k0)
            if self.with_cml
            else np.empty(0)
        )
        extra = self._classical.next(m) if self._classical is not None else np.empty(0)
        if self.record_every > 0:
            first = -(-k0 // self.record_every) * self.record_every
            nrec = max(0, (k0 + m - 1 - first) // self.record_every + 1)
        else:
            nrec = 0
        rec = np.empty((nrec, _kernel.N_REC))
        wl = self.window_len
        win_out = np.empty(((m // wl) + 2 if wl > 0 else 0, 2))
        rows, wins = _kernel.run_block(
            k0, self._phase, dist, g, g_aux, extra,
            self._plant, self._plant_aux,
            self._bpf_sos, self._bpf_z, self._env_sos, self._env_z, self._env_square, self._env_gain,
            self._lia_sos, self._lia_z, self._aux_z,
            self._servo, self._sstate,
            self.record_every, rec, wl, self._win_acc, win_out,
        )  # fmt: skip
        if rows:
            self._records.append(rec[:rows])
        if wins:
            self._windows.append(win_out[:wins].copy())
        self.position += m

    @property
    def time(self):
        return self.position / self.fs

    def records(self):
        if not self._records:
            return np.empty((0, _kernel.N_REC))
        if len(self._records) > 1:
            self._records = [np.concatenate(self._records)]
        return self._records[0]

    def window_variances(self):
        """Unbiased variance of the bandpass output over each completed window."""
        if not self._windows:
            return np.empty(0)
        w = np.concatenate(self._windows)
        n = self.window_len
        return (w[:, 1] - w[:, 0] ** 2 / n) / (n - 1)

    def trace(self):
        rec = self.records()
        names = ["true_phase", "photocurrent", "bpf_out", "envelope", "error_signal", "control"]
        channels = {name: rec[:, i].copy() for i, name in enumerate(names)}
        if self.with_cml:
            channels["cml_error"] = rec[:, _kernel.REC_AUX].copy()
        meta = {
            "config_hash": self.synth.config_hash(),
            "record_every": self.record_every,
            "ref_phase": format(self.ref_phase, ".12g"),
        }
        return SimTrace(self.fs / max(self.record_every, 1), self.synth.seed, channels, meta)

    def recorded_indices(self):
        n = self.records().shape[0]
        return np.arange(n) * self.record_every


def _wrap(x, period):
    return (np.asarray(x) + period / 2) % period - period / 2


def _moving_mean(x, w):
    if w <= 1 or len(x) < w:
        return np.asarray(x, float)
    c = np.cumsum(np.concatenate([[0.0], x]))
    out = np.empty(len(x))
    out[w - 1 :] = (c[w:] - c[:-w]) / w
    out[: w - 1] = c[1:w] / np.arange(1, w)
    return out


def lock_window(synth, chain, servo=None):
    """Averaging time used to decide whether the mean phase sits on a lock point.

    Long enough to average over the dither, the lock-in response and one
    period of the unity-gain frequency.
    """
    t = max(10 / synth.modulation.freq_hz, 4 * chain.lockin.time_constant)
    if servo is not None and servo.ugf_hz:
        t = max(t, 1 / servo.ugf_hz)
    return t


def lock_report(sim, lock_points, *, threshold=0.05, window_time=None, slope=None):
    """Assess a run: did the phase settle onto one of ``lock_points`` and stay there?"""
    synth, fs = sim.synth, sim.fs
    rec = sim.records()
    period = lock_period(synth)
    if rec.shape[0] == 0 or not lock_points:
        return LockReport(False, math.nan, math.nan, math.nan, math.nan, math.nan, threshold)
    idx = sim.recorded_indices()
    fs_rec = fs / sim.record_every
    mod = synth.modulation
    theta = rec[:, _kernel.REC_THETA] - mod.theta1 * np.sin(mod.omega_mod * idx / fs)
    if window_time is None:
        window_time = lock_window(synth, sim.chain, sim.servo)
    w = max(1, min(int(round(window_time * fs_rec)), len(theta) // 2))
    cands = np.asarray(lock_points)
    final = np.array([_wrap(np.mean(theta[-w:]) - c, period) for c in cands])
    j = int(np.argmin(np.abs(final)))
    lp = float(cands[j])
    dev = _wrap(theta - lp, period)
    avg = _moving_mean(dev, w)
    inside = np.abs(avg) < threshold
    inside[: min(w - 1, len(inside))] = False
    if not inside[-1]:
        return LockReport(False, math.nan, lp, lp + float(avg[-1]), math.nan, math.nan, threshold)
    outside = np.nonzero(~inside)[0]
    i0 = 0 if outside.size == 0 else int(outside[-1]) + 1
    t_acq = idx[i0] / fs
    dev_after = dev[i0:]
    err = rec[i0:, _kernel.REC_ERR]
    rms_true = float(np.sqrt(np.mean(dev_after**2)))
    rms_inloop = float(np.std(err) / abs(slope)) if slope else math.nan
    psd = (np.array([]), np.array([]))
    if len(err) >= 16:
        psd = welch_psd(err - err.mean(), fs_rec, segment=min(len(err), 1 << 12))
    return LockReport(True, float(t_acq), lp, lp + float(avg[-1]), rms_true, rms_inloop, threshold, psd)


def run_closed_loop(
    synth,
    chain,
    servo,
    duration=None,
    *,
    record_every=1,
    lock_threshold=0.05,
    hold_time=None,
    window_time=None,
    with_cml=False,
):
    """Run the loop and report on lock acquisition.

    With ``hold_time`` set the run stops as soon as the phase has stayed
    within ``lock_threshold`` of a lock point for ``hold_time`` seconds, which
    bounds the cost of acquisition studies. A run that never settles is
    reported with ``acquired=False`` rather than raising.

    Returns
    -------
    SimTrace, LockReport
    """
    duration = synth.duration if duration is None else duration
    sim = LoopSimulator(synth, chain, servo, record_every=record_every, with_cml=with_cml)
    pts = stable_lock_points(synth, chain, servo) if servo is not None else []
    slope = None
    if pts:
        slope = predicted_slope(synth, chain, pts[0], servo.error_source)
    total = int(round(duration * synth.fs))
    if hold_time is None:
        sim.advance(total)
        report = lock_report(sim, pts, threshold=lock_threshold, window_time=window_time, slope=slope)
    else:
        chunk = max(BLOCK, int(0.1 * synth.fs))
        while True:
            sim.advance(min(chunk, total - sim.position))
            report = lock_report(sim, pts, threshold=lock_threshold, window_time=window_time, slope=slope)
            if report.acquired and sim.time - report.acquisition_time >= hold_time:
                break
            if sim.position >= total:
                break
    return sim.trace(), report


def cml_readout(trace, pair, mod, lockin=None, *, port=Port.C, seed=None, ref_phase=0.0):
    """Idealised coherent-modulation-locking error signal for a recorded run.

    The complementary port's photocurrent is re-synthesised from the recorded
    true phase (mean ``dc_scale * fringe_power`` plus independent shot noise)
    and demodulated at the dither frequency.
    """
    if trace.meta.get("mode", "coherent") == Mode.HOMODYNE.value:
        raise ValueError("the coherent modulation readout needs a coherent plant")
    if not isinstance(pair, CoherentPairSpec):
        raise TypeError("cml_readout expects a CoherentPairSpec; homodyne plants have no coherent readout")
    lockin = lockin or LockInConfig()
    fs = trace.fs
    theta = trace["true_phase"]
    sgn = 1.0 if Port(port) is Port.D else -1.0
    a, b = pair.amp_a, pair.amp_b
    power = np.maximum(0.5 * (a * a + b * b + sgn * 2 * a * b * np.sin(theta)), 0.0)
    seed = trace.seed if seed is None else seed
    g = rng.standard_normal(seed, len(theta), stream=rng.STREAM_AUX_DETECTOR)
    x = pair.dc_scale * power + np.sqrt(power * fs / 2) * g
    lia = lockin.build(fs, mod.freq_hz, ref_phase).fit()
    return lia.transform(x)


def open_loop_error(synth, chain, theta0, *, duration, settle, n_blocks=20):
    """Mean NL error signal at each average phase in ``theta0`` (open loop).

    The standard error comes from the scatter of ``n_blocks`` contiguous block
    means after ``settle`` seconds.
    """
    theta0 = np.atleast_1d(np.asarray(theta0, float))
    eps = np.empty(len(theta0))
    err = np.empty(len(theta0))
    rec_every = max(1, int(synth.fs // 2000))
    for i, th in enumerate(theta0):
        s = synth.with_modulation(theta0=float(th))
        sim = LoopSimulator(s, chain, None, record_every=rec_every)
        sim.advance(int(round((settle + duration) * s.fs)))
        rec = sim.records()
        e = rec[int(round(settle * s.fs / rec_every)) :, _kernel.REC_ERR]
        blocks = np.array_split(e, n_blocks)
        means = np.array([b.mean() for b in blocks])
        eps[i] = e.mean()
        err[i] = means.std(ddof=1) / math.sqrt(n_blocks)
    return ErrorSignalCurve(theta0, eps, err)


# ---------------------------------------------------------------- stability


def averaging_samples(synth, chain, averaging_time=None):
    """Error-point averaging window in samples, a whole number of dither periods.

    Defaults to the equivalent averaging time of the lock-in low-pass:
    2 tau for 6 dB/octave and 4 tau for 12 dB/octave.
    """
    if averaging_time is None:
        averaging_time = (2 if chain.lockin.slope == 6 else 4) * chain.lockin.time_constant
    period = 1.0 / synth.modulation.freq_hz
    n_periods = max(1, round(averaging_time / period))
    return int(round(n_periods * period * synth.fs))


def measure_curvature(synth, chain, theta, *, delta=0.25, duration=1.0, window_len=None):
    """Half the second derivative of the detected noise power at ``theta``, and the power there.

    Three open-loop runs at ``theta - delta``, ``theta`` and ``theta + delta``
    share one noise seed (common random numbers), so most of the estimator
    noise cancels in the second difference.
    """
    window_len = window_len or averaging_samples(synth, chain)
    p = []
    for th in (theta - delta, theta, theta + delta):
        s = synth.with_modulation(theta0=th).replace(disturbance=DisturbanceSpec())
        sim = LoopSimulator(s, chain, None, record_every=0, window_len=window_len)
        sim.advance(int(round(duration * s.fs)))
        p.append(float(np.mean(sim.window_variances()[1:])))
    return (p[0] + p[2] - 2 * p[1]) / (2 * delta * delta), p[1]


@dataclass
class StabilityEstimate:
    """Monte Carlo lock stability over an ensemble of seeds (radians)."""

    lock_point: LockPoint
    delta_theta: float
    std: float
    stderr: float
    values: np.ndarray
    n_used: int
    excluded_seeds: list
    half_curvature: float
    mean_power: float
    bandwidth_product: float
    residual_rms_true: float
    residual_rms_inloop: float

    @property
    def n_excluded(self):
        return len(self.excluded_seeds)

    @property
    def ci95(self):
        return self.delta_theta - 1.96 * self.stderr, self.delta_theta + 1.96 * self.stderr


def bandwidth_product(synth, chain, window_len):
    """Independent noise samples per averaging window: 2 B_ind T."""
    b_ind = chain.bandpass.build(synth.fs).fit().independent_bandwidth()
    return 2.0 * b_ind * window_len / synth.fs


def measure_stability(
    synth,
    chain,
    lock_point,
    n_seeds=20,
    servo=None,
    *,
    seeds=None,
    duration=1.0,
    settle=0.1,
    averaging_time=None,
    ugf_hz=None,
    curvature_delta=0.25,
    curvature_duration=None,
    lock_threshold=0.05,
):
    """Lock stability by Monte Carlo, with ensemble mean and spread.

    Each seed runs the closed loop starting on the lock point. The windowed
    variance of the bandpass output (the noise on the noise) is measured over
    the error-point averaging time and converted to phase through the
    curvature of the mean detected power: ``sqrt(sigma_V / (V''/2))``.
    Seeds whose loop does not stay locked are excluded and listed.
    """
    if n_seeds < 10 and seeds is None:
        raise ValueError("measure_stability needs at least 10 seeds")
    seeds = list(range(synth.seed, synth.seed + n_seeds)) if seeds is None else list(seeds)
    lock_point = LockPoint(lock_point)
    theta = target_phase(synth, lock_point)
    base = synth.with_modulation(theta0=theta)
    if servo is None:
        # no disturbance is applied, so a slow loop keeps the fed-back noise low
        ugf = ugf_hz or chain.lockin.corner_hz / 16
        servo = design_servo(base, chain, ugf, lock_point)
    wl = averaging_samples(base, chain, averaging_time)
    half_curv, power = measure_curvature(
        base.replace(seed=seeds[0]), chain, theta, delta=curvature_delta,
        duration=curvature_duration or duration, window_len=wl,
    )  # fmt: skip
    # the power has a minimum at squeezed/dark locks and a maximum at the others
    half_curv = abs(half_curv)
    if half_curv == 0:
        raise RuntimeError("detected power has no curvature at the lock point")
    pts = stable_lock_points(base, chain, servo)
    slope = predicted_slope(base, chain, theta, servo.error_source)
    skip = int(math.ceil(settle * synth.fs / wl))
    rec_every = max(1, int(synth.fs // 1000))
    vals, excluded, rms_t, rms_i = [], [], [], []
    for sd in seeds:
        s = base.replace(seed=sd)
        sim = LoopSimulator(s, chain, servo, record_every=rec_every, window_len=wl)
        sim.advance(int(round((settle + duration) * s.fs)))
        rep = lock_report(sim, pts, threshold=lock_threshold, slope=slope)
        if not rep.acquired or abs(_wrap(rep.lock_point - theta, lock_period(s))) > 1e-6:
            excluded.append(sd)
            continue
        sig = float(np.std(sim.window_variances()[skip:], ddof=1))
        vals.append(math.sqrt(sig / half_curv))
        rms_t.append(rep.residual_rms_true)
        rms_i.append(rep.residual_rms_inloop)
    vals = np.array(vals)
    n = len(vals)
    mean = float(vals.mean()) if n else math.nan
    std = float(vals.std(ddof=1)) if n > 1 else math.nan
    return StabilityEstimate(
        lock_point=lock_point,
        delta_theta=mean,
        std=std,
        stderr=std / math.sqrt(n) if n > 1 else math.nan,
        values=vals,
        n_used=n,
        excluded_seeds=excluded,
        half_curvature=half_curv,
        mean_power=power,
        bandwidth_product=bandwidth_product(base, chain, wl),
        residual_rms_true=float(np.mean(rms_t)) if rms_t else math.nan,
        residual_rms_inloop=float(np.mean(rms_i)) if rms_i else math.nan,
    )
