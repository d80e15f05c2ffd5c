"""Sample-by-sample synthesis of detector photocurrents.

The photocurrent is scaled so that its one-sided power spectral density equals
the instantaneous noise variance in SNL units: a sample at rate ``fs`` with
variance ``V`` is drawn as ``sqrt(V fs / 2) g``. Unit-variance (shot-noise)
light therefore reads 0 dB on a one-sided PSD.
"""

import csv
import dataclasses
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import signal

from . import __version__, rng
from .plant import (
    CoherentPairSpec,
    DisturbanceGenerator,
    DisturbanceSpec,
    ModulationSpec,
    Port,
    SqueezedStateSpec,
    dither,
    effective_variances,
    quadrature_variances,
)

CHANNELS = ("true_phase", "photocurrent", "bpf_out", "envelope", "error_signal", "control")


class Mode(str, Enum):
    HOMODYNE = "homodyne"
    COHERENT = "coherent"


@dataclass(frozen=True)
class SynthesisConfig:
    """Everything needed to synthesise one photocurrent record.

    ``signal_amp`` > 0 switches the homodyne model from the LO-dominated limit
    to the two-field form, with ``lo_amp`` the local-oscillator amplitude.
    ``classical_level`` adds 1/f classical intensity noise whose one-sided PSD
    equals ``classical_level`` (SNL units) at ``classical_ref_freq``.
    """

    mode: Mode = Mode.HOMODYNE
    squeezed: SqueezedStateSpec = field(default_factory=SqueezedStateSpec)
    coherent: CoherentPairSpec = field(default_factory=CoherentPairSpec)
    port: Port = Port.D
    modulation: ModulationSpec = field(default_factory=ModulationSpec)
    disturbance: DisturbanceSpec = field(default_factory=DisturbanceSpec)
    fs: float = 1e6
    duration: float = 1.0
    seed: int = 0
    signal_amp: float = 0.0
    lo_amp: float = 1.0
    classical_level: float = 0.0
    classical_ref_freq: float = 1e3

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "port", Port(self.port))
        if not self.fs > 0:
            raise ValueError("fs must be > 0")
        if not self.fs >= 10 * self.modulation.freq_hz:
            raise ValueError(
                f"fs={self.fs} Hz must be at least 10x the dither frequency {self.modulation.freq_hz:.6g} Hz"
            )
        if not self.duration > 0:
            raise ValueError("duration must be > 0")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        if self.classical_level < 0:
            raise ValueError("classical_level must be >= 0")

    @property
    def n_samples(self):
        return int(round(self.duration * self.fs))

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def with_modulation(self, **changes):
        return dataclasses.replace(self, modulation=dataclasses.replace(self.modulation, **changes))

    def variances(self):
        """Effective quadrature variances seen by the homodyne detector."""
        v = quadrature_variances(self.squeezed)
        if self.signal_amp > 0:
            v = effective_variances(v, self.signal_amp, self.lo_amp)
        return v

    def plant_coefficients(self):
        """``(m0, m1, p0, p1, p2)`` with mean = m0 + m1 sin(t) and
        variance = p0 + p1 sin(t) + p2 cos(2t) in SNL units."""
        if self.mode is Mode.HOMODYNE:
            v = self.variances()
            return 0.0, 0.0, 0.5 * (v.v1 + v.v2), 0.0, 0.5 * (v.v2 - v.v1)
        a, b = self.coherent.amp_a, self.coherent.amp_b
        sgn = 1.0 if self.port is Port.D else -1.0
        p0, p1 = 0.5 * (a * a + b * b), sgn * a * b
        dc = self.coherent.dc_scale
        return dc * p0, dc * p1, p0, p1, 0.0

    def config_hash(self):
        return config_digest(self)


def _jsonable(obj):
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    raise TypeError(type(obj))


def config_digest(obj):
    """Short sha256 digest of a dataclass config."""
    blob = json.dumps(dataclasses.asdict(obj), sort_keys=True, default=_jsonable)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def mean_and_variance(coeffs, theta):
    m0, m1, p0, p1, p2 = coeffs
    s = np.sin(theta)
    var = np.maximum(p0 + p1 * s + p2 * np.cos(2 * theta), 0.0)
    return m0 + m1 * s, var


@dataclass
class SimTrace:
    """Uniformly sampled record of named channels."""

    fs: float
    seed: int
    channels: dict
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.fs > 0:
            raise ValueError("fs must be > 0")
        lengths = {k: len(v) for k, v in self.channels.items()}
        if len(set(lengths.values())) > 1:
            raise ValueError(f"channels differ in length: {lengths}")
        for k, v in self.channels.items():
            v = np.asarray(v, dtype=float)
            if not np.all(np.isfinite(v)):
                raise ValueError(f"channel {k!r} contains non-finite values")
            self.channels[k] = v

    @property
    def n(self):
        return len(next(iter(self.channels.values()))) if self.channels else 0

    @property
    def time(self):
        return np.arange(self.n) / self.fs

    def __getitem__(self, name):
        return self.channels[name]

    def to_csv(self, path_or_buf):
        """Header row of channel names, one row per sample, metadata in ``#`` lines."""
        buf = io.StringIO()
        meta = {"fs": _fmt(self.fs), "seed": str(self.seed), "version": __version__}
        meta.update({k: str(v) for k, v in self.meta.items()})
        for k in sorted(meta):
            buf.write(f"# {k} = {meta[k]}\n")
        names = list(self.channels)
        buf.write(",".join(names) + "\n")
        cols = np.column_stack([self.channels[k] for k in names]) if names else np.empty((0, 0))
        for row in cols:
            buf.write(",".join(_fmt(v) for v in row) + "\n")
        text = buf.getvalue()
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(text)
        else:
            with open(path_or_buf, "w", newline="") as fh:
                fh.write(text)

    @classmethod
    def from_csv(cls, path_or_buf):
        if hasattr(path_or_buf, "read"):
            text = path_or_buf.read()
        else:
            with open(path_or_buf) as fh:
                text = fh.read()
        meta, body = {}, []
        for line in text.splitlines():
            if line.startswith("#"):
                k, _, v = line[1:].partition("=")
                meta[k.strip()] = v.strip()
            elif line.strip():
                body.append(line)
        rows = list(csv.reader(body))
        names = rows[0]
        data = np.array(rows[1:], dtype=float).reshape(-1, len(names))
        fs = float(meta.pop("fs"))
        seed = int(meta.pop("seed"))
        meta.pop("version", None)
        return cls(fs, seed, {k: data[:, i] for i, k in enumerate(names)}, meta)


def _fmt(v):
    return format(float(v), ".12g")


class ClassicalNoiseGenerator:
    """1/f intensity noise from a bank of first-order low-passes (two per decade)."""

    def __init__(self, level, ref_freq, fs, seed, f_min=None):
        self.fs = fs
        self.seed = seed
        self.position = 0
        f_min = f_min or max(fs * 1e-6, 1e-2)
        corners = f_min * 10 ** (0.5 * np.arange(int(2 * math.log10(fs / 2 / f_min)) + 1))
        self._sos = [signal.butter(1, fc, fs=fs, output="sos") for fc in corners[corners < fs / 2]]
        fc_used = np.array([fc for fc in corners if fc < fs / 2])
        # per-pole white PSD ~ 1/fc gives a 1/f envelope; normalise at ref_freq
        w = 1.0 / fc_used
        psd_ref = np.sum(w / (1 + (ref_freq / fc_used) ** 2))
        self._gains = np.sqrt(level * w / psd_ref * fs / 2)
        self._zi = [np.zeros((1, 2)) for _ in self._sos]

    def next(self, n):
        out = np.zeros(n)
        for i, sos in enumerate(self._sos):
            # each pole needs its own white source, or the poles add coherently
            g = rng.standard_normal(self.seed, n, stream=rng.STREAM_CLASSICAL + 8 * i, start=self.position)
            y, self._zi[i] = signal.sosfilt(sos, g, zi=self._zi[i])
            out += self._gains[i] * y
        self.position += n
        return out


def synthesize(config, control_feedback=None):
    """Synthesise the photocurrent for ``config``.

    Parameters
    ----------
    config : SynthesisConfig
    control_feedback : None, array_like or callable
        Actuator control in radians. A callable is invoked as
        ``control_feedback(k, photocurrent[:k])`` and must return control[k]
        from samples up to k-1; it runs a Python loop and suits short records.

    Returns
    -------
    SimTrace
        Channels ``true_phase``, ``photocurrent`` and ``control``.
    """
    fs, n, seed = config.fs, config.n_samples, config.seed
    mod = config.modulation
    coeffs = config.plant_coefficients()
    free = mod.theta0 + dither(mod, fs, n) + DisturbanceGenerator(config.disturbance, fs, seed).next(n)
    g = rng.standard_normal(seed, n, stream=rng.STREAM_PHOTOCURRENT)
    extra = np.zeros(n)
    if config.classical_level > 0:
        extra = ClassicalNoiseGenerator(config.classical_level, config.classical_ref_freq, fs, seed).next(n)
    scale = math.sqrt(fs / 2)

    if callable(control_feedback):
        control = np.zeros(n)
        x = np.zeros(n)
        for k in range(n):
            u = float(control_feedback(k, x[:k]))
            if not math.isfinite(u):
                raise ValueError(f"control_feedback returned a non-finite value at sample {k}")
            control[k] = u
            m, v = mean_and_variance(coeffs, free[k] + u)
            x[k] = m + math.sqrt(v) * scale * g[k] + extra[k]
        theta = free + control
    else:
        control = np.zeros(n) if control_feedback is None else np.asarray(control_feedback, dtype=float)
        if control.shape != (n,):
            raise ValueError(f"control must have shape ({n},), got {control.shape}")
        if not np.all(np.isfinite(control)):
            raise ValueError("control contains non-finite samples")
        theta = free + control
        m, v = mean_and_variance(coeffs, theta)
        x = m + np.sqrt(v) * scale * g + extra

    meta = {"config_hash": config.config_hash()}
    return SimTrace(fs, seed, {"true_phase": theta, "photocurrent": x, "control": control}, meta)


def variance_over_windows(x, window):
    """Unbiased sample variance over consecutive disjoint windows.

    A trailing partial window is dropped.
    """
    x = np.asarray(x, dtype=float)
    window = int(window)
    if window < 2:
        raise ValueError("window must be >= 2 samples")
    if window > x.shape[0]:
        raise ValueError(f"window {window} exceeds the record length {x.shape[0]}")
    m = x.shape[0] // window
    return x[: m * window].reshape(m, window).var(axis=1, ddof=1)
