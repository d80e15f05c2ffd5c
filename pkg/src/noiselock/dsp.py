"""Readout chain primitives: bandpass, envelope detector, lock-in, spectra.

The filters follow the scikit-learn transformer protocol. Hyperparameters are
set in ``__init__``, ``fit`` designs the coefficients and resets the filter
state, and ``transform`` filters a block along axis 0. ``transform`` is
*streaming*: state carries over between calls, so a record processed in pieces
matches the record processed whole. Call ``reset`` (or ``fit``) to start over.
Inputs may be 1-D series or 2-D ``(n_samples, n_channels)`` arrays.

Because state carries over, ``Pipeline.fit(X)`` leaves the intermediate steps
positioned after ``X``; use ``fit_transform`` for one-shot processing.

Recursive filters are second-order sections in transposed direct form II,
designed with the bilinear transform with prewarped corners
(``scipy.signal.butter``). The coefficients depend only on ``(corner, fs)``.
"""

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import signal
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.pipeline import Pipeline
from sklearn.utils.validation import check_array, check_is_fitted


class EnvelopeLaw(str, Enum):
    LINEAR = "linear"
    SQUARE = "square"


def _as_series(X):
    return check_array(X, ensure_2d=False, dtype=np.float64, ensure_all_finite=True, ensure_min_samples=1)


def _first_order_sos(fc, fs, btype):
    b, a = signal.butter(1, fc, btype=btype, fs=fs)
    return np.array([[b[0], b[1], 0.0, 1.0, a[1], 0.0]])


def lowpass_sos(time_constant, fs, slope_db=6):
    """Lock-in style low-pass: one (6 dB/oct) or two (12 dB/oct) identical RC poles."""
    if slope_db not in (6, 12):
        raise ValueError(f"slope must be 6 or 12 dB/octave, got {slope_db}")
    fc = 1.0 / (2 * math.pi * time_constant)
    if not 0 < fc < fs / 2:
        raise ValueError(f"time constant {time_constant} s out of range for fs={fs}")
    sec = _first_order_sos(fc, fs, "lowpass")
    return np.vstack([sec] * (slope_db // 6))


class _SOSFilter(TransformerMixin, BaseEstimator):
    """Shared streaming machinery; subclasses provide ``_design``."""

    def fit(self, X=None, y=None):
        self.sos_ = self._design()
        self.reset()
        return self

    def reset(self):
        check_is_fitted(self, "sos_")
        self.zi_ = None
        return self

    def _filter(self, x):
        if self.zi_ is None:
            shape = (self.sos_.shape[0], 2) + x.shape[1:]
            self.zi_ = np.zeros(shape)
        y, self.zi_ = signal.sosfilt(self.sos_, x, axis=0, zi=self.zi_)
        return y

    def frequency_response(self, freqs):
        check_is_fitted(self, "sos_")
        _, h = signal.sosfreqz(self.sos_, worN=np.asarray(freqs, dtype=float), fs=self.fs)
        return h


class BandpassFilter(_SOSFilter):
    """Detection bandpass: ``low_rollup_order`` first-order high-passes at
    ``f_low`` followed by a Butterworth low-pass of ``high_order`` at ``f_high``.

    In ``causal`` mode the cascade is normalised to unit gain at the geometric
    centre frequency. ``ideal`` mode is an offline brick-wall filter applied in
    the frequency domain (no state, not causal).
    """

    def __init__(self, fs=1e6, f_low=10e3, f_high=300e3, low_rollup_order=3, high_order=4, mode="causal"):
        self.fs = fs
        self.f_low = f_low
        self.f_high = f_high
        self.low_rollup_order = low_rollup_order
        self.high_order = high_order
        self.mode = mode

    def _design(self):
        if not 0 < self.f_low < self.f_high < self.fs / 2:
            raise ValueError(
                f"bandpass corners need 0 < f_low < f_high < fs/2, got "
                f"f_low={self.f_low}, f_high={self.f_high}, fs={self.fs}"
            )
        if self.mode not in ("causal", "ideal"):
            raise ValueError(f"mode must be 'causal' or 'ideal', got {self.mode!r}")
        parts = [_first_order_sos(self.f_low, self.fs, "highpass")] * int(self.low_rollup_order)
        if self.high_order > 0:
            parts.append(signal.butter(int(self.high_order), self.f_high, "lowpass", fs=self.fs, output="sos"))
        sos = np.vstack(parts)
        _, h = signal.sosfreqz(sos, worN=[self.center_frequency], fs=self.fs)
        sos[0, :3] /= abs(h[0])
        return sos

    @property
    def center_frequency(self):
        return math.sqrt(self.f_low * self.f_high)

    def transform(self, X):
        check_is_fitted(self, "sos_")
        x = _as_series(X)
        if self.mode == "ideal":
            n = x.shape[0]
            f = np.fft.rfftfreq(n, 1 / self.fs)
            mask = (f >= self.f_low) & (f <= self.f_high)
            spec = np.fft.rfft(x, axis=0)
            spec[~mask] = 0
            return np.fft.irfft(spec, n=n, axis=0)
        return self._filter(x)

    def noise_bandwidth(self, n_grid=1 << 16):
        """One-sided noise-equivalent bandwidth, integral of |H|^2 in Hz."""
        f, p = self._power_response(n_grid)
        return np.trapezoid(p, f)

    def independent_bandwidth(self, n_grid=1 << 16):
        """``(int |H|^2)^2 / int |H|^4``: the width of a brick-wall band with the same noise-on-noise."""
        f, p = self._power_response(n_grid)
        return np.trapezoid(p, f) ** 2 / np.trapezoid(p * p, f)

    def _power_response(self, n_grid):
        check_is_fitted(self, "sos_")
        if self.mode == "ideal":
            f = np.linspace(self.f_low, self.f_high, 3)
            return f, np.ones_like(f)
        f, h = signal.sosfreqz(self.sos_, worN=n_grid, fs=self.fs)
        return f, np.abs(h) ** 2


class EnvelopeDetector(_SOSFilter):
    """Rectifier (``linear``) or square-law (``square``) detector plus a
    first-order low-pass at ``cutoff``.

    The default calibration is pi/2 for the linear law, so a steady sine of
    amplitude A reads A, and 1 for the square law, so the output is the mean
    power of the input.
    """

    def __init__(self, fs=1e6, cutoff=1e3, law="linear", gain_calibration=None):
        self.fs = fs
        self.cutoff = cutoff
        self.law = law
        self.gain_calibration = gain_calibration

    def _design(self):
        EnvelopeLaw(self.law)
        if not 0 < self.cutoff < self.fs / 2:
            raise ValueError(f"envelope cutoff {self.cutoff} Hz out of range for fs={self.fs}")
        return _first_order_sos(self.cutoff, self.fs, "lowpass")

    @property
    def gain(self):
        if self.gain_calibration is not None:
            return self.gain_calibration
        return math.pi / 2 if EnvelopeLaw(self.law) is EnvelopeLaw.LINEAR else 1.0

    def transform(self, X):
        check_is_fitted(self, "sos_")
        x = _as_series(X)
        det = np.abs(x) if EnvelopeLaw(self.law) is EnvelopeLaw.LINEAR else x * x
        return self._filter(self.gain * det)


class LockInAmplifier(_SOSFilter):
    """Single-phase lock-in: ``LPF(2 x[k] sin(2 pi f_ref k / fs + ref_phase))``.

    The sample counter advances across ``transform`` calls so the reference
    stays phase-continuous when streaming.
    """

    def __init__(self, fs=1e6, ref_freq=197.0, ref_phase=0.0, time_constant=10e-3, slope=12):
        self.fs = fs
        self.ref_freq = ref_freq
        self.ref_phase = ref_phase
        self.time_constant = time_constant
        self.slope = slope

    def _design(self):
        fc = 1 / (2 * math.pi * self.time_constant)
        if fc >= self.ref_freq:
            raise ValueError(f"lock-in corner {fc:.3g} Hz must be well below the reference {self.ref_freq} Hz")
        if fc > self.ref_freq / 10:
            warnings.warn(f"lock-in corner {fc:.3g} Hz is not << reference {self.ref_freq} Hz", stacklevel=3)
        return lowpass_sos(self.time_constant, self.fs, self.slope)

    def reset(self):
        super().reset()
        self.counter_ = 0
        return self

    def reference(self, n, start=0):
        k = np.arange(start, start + n, dtype=float)
        return np.sin(2 * np.pi * self.ref_freq * k / self.fs + self.ref_phase)

    def transform(self, X):
        check_is_fitted(self, "sos_")
        x = _as_series(X)
        n = x.shape[0]
        ref = self.reference(n, self.counter_)
        self.counter_ += n
        if x.ndim == 2:
            ref = ref[:, None]
        return self._filter(2.0 * x * ref)


class ErrorSignalFit(BaseEstimator):
    """Least-squares fit of ``A sin(h theta) + B cos(h theta)`` to an error curve.

    ``harmonic`` is 2 for the homodyne lock (pi-periodic curve) and 1 for
    coherent fringes. After ``fit``, ``amplitude_`` and ``phase_offset_``
    describe the curve as ``amplitude_ * sin(h (theta - phase_offset_))`` for
    ``kind='sin'`` or the cosine analogue for ``kind='cos'``.
    """

    def __init__(self, harmonic=2, kind="sin"):
        self.harmonic = harmonic
        self.kind = kind

    def fit(self, theta, epsilon, sample_weight=None):
        theta = _as_series(theta)
        eps = _as_series(epsilon)
        h = self.harmonic
        basis = np.column_stack([np.sin(h * theta), np.cos(h * theta)])
        w = np.ones_like(eps) if sample_weight is None else np.asarray(sample_weight, float)
        sw = np.sqrt(w)
        (a, b), *_ = np.linalg.lstsq(basis * sw[:, None], eps * sw, rcond=None)
        self.coef_ = np.array([a, b])
        if self.kind == "sin":
            # a sin + b cos = amp sin(h(theta - off))
            self.amplitude_ = math.copysign(math.hypot(a, b), a)
            self.phase_offset_ = -math.atan(b / a) / h if a != 0 else math.pi / (2 * h)
        elif self.kind == "cos":
            self.amplitude_ = math.copysign(math.hypot(a, b), b)
            self.phase_offset_ = math.atan(a / b) / h if b != 0 else math.pi / (2 * h)
        else:
            raise ValueError(f"kind must be 'sin' or 'cos', got {self.kind!r}")
        resid = eps - self.predict(theta)
        self.rms_residual_ = float(np.sqrt(np.mean(resid**2)))
        self.max_residual_ = float(np.max(np.abs(resid)))
        return self

    def fit_gain(self, theta, epsilon):
        """Single fitted gain on the pure sin/cos shape (no phase freedom); returns ``(A, rms, max)``."""
        theta = _as_series(theta)
        eps = _as_series(epsilon)
        shape = np.sin(self.harmonic * theta) if self.kind == "sin" else np.cos(self.harmonic * theta)
        a = float(shape @ eps / (shape @ shape))
        r = eps - a * shape
        return a, float(np.sqrt(np.mean(r**2))), float(np.max(np.abs(r)))

    def predict(self, theta):
        check_is_fitted(self, "coef_")
        theta = np.asarray(theta, float)
        h = self.harmonic
        return self.coef_[0] * np.sin(h * theta) + self.coef_[1] * np.cos(h * theta)

    def zero_crossings(self, period=2 * math.pi):
        """Zero crossings of the fitted curve in ``[0, period)``."""
        check_is_fitted(self, "coef_")
        h = self.harmonic
        base = self.phase_offset_ if self.kind == "sin" else self.phase_offset_ + math.pi / (2 * h)
        step = math.pi / h
        return np.sort(np.mod(base + step * np.arange(int(round(period / step))), period))


def bandpass(x, cfg, fs):
    """Filter ``x`` through the detection bandpass described by ``cfg``."""
    return cfg.build(fs).fit().transform(x)


def envelope_detect(x, cfg, fs):
    return cfg.build(fs).fit().transform(x)


def lock_in(x, cfg, fs):
    return cfg.build(fs).fit().transform(x)


def welch_psd(x, fs, segment=None, overlap=0.5):
    """One-sided Hann-windowed Welch PSD; unit-variance white noise reads 2/fs.

    Returns
    -------
    freqs, psd : ndarray
    """
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("welch_psd needs a non-empty input")
    n = x.shape[0]
    seg = n if segment is None else int(segment)
    if seg > n:
        raise ValueError(f"segment length {seg} exceeds the record length {n}")
    if not 0 <= overlap < 1:
        raise ValueError("overlap must lie in [0, 1)")
    return signal.welch(
        x, fs=fs, window="hann", nperseg=seg, noverlap=int(seg * overlap), detrend=False, scaling="density"
    )


def band_power(freqs, psd, f_lo, f_hi):
    """Integrate a PSD over ``[f_lo, f_hi]`` by bin sums."""
    sel = (freqs >= f_lo) & (freqs <= f_hi)
    df = freqs[1] - freqs[0]
    return float(np.sum(psd[sel]) * df)


@dataclass(frozen=True)
class BandpassConfig:
    f_low: float = 10e3
    f_high: float = 300e3
    low_rollup_order: int = 3
    high_order: int = 4

    def __post_init__(self):
        if not 0 < self.f_low < self.f_high:
            raise ValueError(f"need 0 < f_low < f_high, got {self.f_low}, {self.f_high}")
        if self.low_rollup_order < 0 or self.high_order < 0:
            raise ValueError("filter orders must be >= 0")

    def build(self, fs, mode="causal"):
        return BandpassFilter(fs, self.f_low, self.f_high, self.low_rollup_order, self.high_order, mode)


@dataclass(frozen=True)
class EnvelopeConfig:
    cutoff: float = 1e3
    law: EnvelopeLaw = EnvelopeLaw.SQUARE
    gain_calibration: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "law", EnvelopeLaw(self.law))
        if not self.cutoff > 0:
            raise ValueError("envelope cutoff must be > 0")

    def build(self, fs):
        return EnvelopeDetector(fs, self.cutoff, self.law.value, self.gain_calibration)


@dataclass(frozen=True)
class LockInConfig:
    """``ref_freq`` of ``None`` means "use the dither frequency"."""

    time_constant: float = 10e-3
    slope: int = 12
    ref_freq: float | None = None
    ref_phase: float = 0.0

    def __post_init__(self):
        if self.slope not in (6, 12):
            raise ValueError(f"lock-in slope must be 6 or 12 dB/octave, got {self.slope}")
        if not self.time_constant > 0:
            raise ValueError("time constant must be > 0")

    @property
    def corner_hz(self):
        return 1 / (2 * math.pi * self.time_constant)

    def build(self, fs, ref_freq=None, ref_phase=None):
        f = self.ref_freq if ref_freq is None else ref_freq
        if f is None:
            raise ValueError("lock-in reference frequency is not set")
        p = self.ref_phase if ref_phase is None else ref_phase
        return LockInAmplifier(fs, f, p, self.time_constant, self.slope)


@dataclass(frozen=True)
class DspChainConfig:
    """Bandpass -> envelope detector -> lock-in."""

    bandpass: BandpassConfig = field(default_factory=BandpassConfig)
    envelope: EnvelopeConfig = field(default_factory=EnvelopeConfig)
    lockin: LockInConfig = field(default_factory=LockInConfig)

    def __post_init__(self):
        if not self.envelope.cutoff < self.bandpass.f_low:
            raise ValueError(
                f"envelope cutoff {self.envelope.cutoff} Hz must lie below the bandpass "
                f"low corner {self.bandpass.f_low} Hz"
            )

    def validate(self, fs, mod_freq):
        if not fs >= 2 * self.bandpass.f_high:
            raise ValueError(f"fs={fs} Hz must be at least twice f_high={self.bandpass.f_high} Hz")
        if not self.lockin.corner_hz < mod_freq:
            raise ValueError("lock-in corner must lie below the modulation frequency")

    def pipeline(self, fs, mod_freq, ref_phase=0.0):
        """The chain as an sklearn :class:`~sklearn.pipeline.Pipeline`."""
        return Pipeline(
            [
                ("bandpass", self.bandpass.build(fs)),
                ("envelope", self.envelope.build(fs)),
                ("lockin", self.lockin.build(fs, mod_freq, ref_phase)),
            ]
        )

    def envelope_response(self, fs, freq):
        """Complex response of the envelope low-pass at ``freq``."""
        return self.envelope.build(fs).fit().frequency_response([freq])[0]

    def compensating_phase(self, fs, freq):
        """Reference phase that cancels the envelope filter lag at ``freq``."""
        return float(np.angle(self.envelope_response(fs, freq)))
