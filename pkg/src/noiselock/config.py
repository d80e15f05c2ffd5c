"""Experiment configuration files.

The format is line oriented::

    # comment
    [section]
    key = value

Values are written in the full-rate (laboratory) frame. ``scale_factor``
maps them onto the simulated frame: frequencies and rates are multiplied by
it, times are divided by it. An empty file gives the documented defaults.
Unknown sections or keys, malformed values and out-of-range values raise
:class:`ConfigError` with the offending line number.
"""

import dataclasses
import math
import typing
from dataclasses import dataclass, field
from enum import Enum

from .analytic import LockPoint
from .dsp import BandpassConfig, DspChainConfig, EnvelopeConfig, EnvelopeLaw, LockInConfig
from .loop import ErrorSource, ServoConfig, design_servo
from .plant import (
    CoherentPairSpec,
    DisturbanceKind,
    DisturbanceSpec,
    ModulationSpec,
    Port,
    Quadrature,
    SqueezedStateSpec,
)
from .timeseries import Mode, SynthesisConfig


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is 1-based, or 0 when not tied to a line."""

    def __init__(self, message, line=0):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


class ExperimentKind(str, Enum):
    SWEEP_THETA = "sweep_theta"
    LOCK_ACQUIRE = "lock_acquire"
    STABILITY_VS_R = "stability_vs_R"
    STABILITY_VS_BANDWIDTH = "stability_vs_bandwidth"
    STABILITY_VS_LOSS = "stability_vs_loss"
    SPECTRUM_INLOOP = "spectrum_inloop"
    COHERENT_VS_CML = "coherent_vs_cml"


def _bounds(lo=None, hi=None, lo_incl=True, hi_incl=True):
    """Range metadata checked by the parser; ``None`` means unbounded."""
    return {"bounds": (lo, hi, lo_incl, hi_incl)}


@dataclass
class ExperimentSection:
    kind: ExperimentKind = ExperimentKind.SWEEP_THETA
    seed: int = field(default=0, metadata=_bounds(0))
    scale_factor: float = field(default=0.01, metadata=_bounds(0, 1, False, True))
    output_dir: str = "noiselock-out"


@dataclass
class PlantSection:
    """``dc_scale`` is the mean photocurrent per unit optical power at full rate,
    in units where shot noise has unit one-sided PSD, i.e. sqrt(photon rate / 2).
    Being a square root of a rate it is multiplied by sqrt(scale_factor)."""

    mode: Mode = Mode.HOMODYNE
    squeeze_factor: float = field(default=0.41, metadata=_bounds(0))
    squeezed_quadrature: Quadrature = Quadrature.AMPLITUDE
    loss_lambda: float = field(default=0.0, metadata=_bounds(0, 1, True, False))
    visibility: float = field(default=0.6, metadata=_bounds(0, 1))
    total_power: float = field(default=1.0, metadata=_bounds(0, None, False))
    dc_scale: float = field(default=1.0, metadata=_bounds(0))
    port: Port = Port.D
    signal_amp: float = field(default=0.0, metadata=_bounds(0))
    lo_amp: float = field(default=1.0, metadata=_bounds(0, None, False))
    classical_level: float = field(default=0.0, metadata=_bounds(0))
    classical_ref_freq: float = field(default=100e3, metadata=_bounds(0, None, False))


@dataclass
class ModulationSection:
    freq_hz: float = field(default=19.7e3, metadata=_bounds(0, None, False))
    theta1: float = field(default=0.1, metadata=_bounds(0))
    theta0: float = 0.0
    demod_phase: float | None = None


@dataclass
class DisturbanceSection:
    kind: DisturbanceKind = DisturbanceKind.NONE
    freq: float = field(default=0.0, metadata=_bounds(0))
    amplitude: float = field(default=0.0, metadata=_bounds(0))
    diffusion: float = field(default=0.0, metadata=_bounds(0))
    rate: float = 0.0


@dataclass
class BandpassSection:
    f_low: float = field(default=1e6, metadata=_bounds(0, None, False))
    f_high: float = field(default=30e6, metadata=_bounds(0, None, False))
    low_rollup_order: int = field(default=3, metadata=_bounds(1, 8))
    high_order: int = field(default=4, metadata=_bounds(1, 8))


@dataclass
class EnvelopeSection:
    cutoff: float = field(default=100e3, metadata=_bounds(0, None, False))
    law: EnvelopeLaw = EnvelopeLaw.SQUARE
    gain_calibration: float | None = None


@dataclass
class LockInSection:
    time_constant: float = field(default=100e-6, metadata=_bounds(0, None, False))
    slope: int = field(default=12, metadata={"choices": (6, 12)})


@dataclass
class ServoSection:
    lock_point: LockPoint = LockPoint.SQUEEZED
    error_source: ErrorSource = ErrorSource.NL
    ugf_hz: float = field(default=400.0, metadata=_bounds(0, None, False))
    engage_time: float = field(default=0.0, metadata=_bounds(0))
    limit: float = field(default=100.0, metadata=_bounds(0, None, False))
    ramp_rate: float = 0.0
    sign: int | None = None
    kp: float | None = None
    ki: float | None = None


@dataclass
class RunSection:
    fs: float = field(default=100e6, metadata=_bounds(0, None, False))
    duration: float = field(default=0.1, metadata=_bounds(0, None, False))
    settle: float = field(default=1e-3, metadata=_bounds(0))
    record_every: int = field(default=100, metadata=_bounds(1))
    n_points: int = field(default=24, metadata=_bounds(2))
    n_seeds: int = field(default=20, metadata=_bounds(0))
    n_runs: int = field(default=1, metadata=_bounds(1))
    averaging_time: float | None = None
    segment_time: float = field(default=0.04, metadata=_bounds(0, None, False))
    squeeze_factors: tuple = (0.05, 0.1, 0.2, 0.41, 0.7, 1.0, 1.5, 2.0)
    loss_values: tuple = (0.0, 0.1, 0.5)
    bandwidths: tuple = (1.8e6, 7.2e6, 28.8e6)
    initial_phase_spread: float = field(default=0.0, metadata=_bounds(0))


@dataclass
class TolerancesSection:
    zero_crossing: float = field(default=0.02, metadata=_bounds(0, None, False))
    shape_residual: float = field(default=0.05, metadata=_bounds(0, None, False))
    lock_threshold: float = field(default=0.05, metadata=_bounds(0, None, False))
    acquire_fraction: float = field(default=0.95, metadata=_bounds(0, 1))
    stability_ratio_rel: float = field(default=0.2, metadata=_bounds(0, None, False))
    bandwidth_slope: float = -0.25
    bandwidth_slope_tol: float = field(default=0.05, metadata=_bounds(0, None, False))
    fringe_ratio_db: float = 6.0
    fringe_ratio_tol_db: float = field(default=1.5, metadata=_bounds(0, None, False))
    cml_margin_db: float = 20.0
    loop_suppression_db: float = field(default=6.0, metadata=_bounds(0))


@dataclass
class ExperimentConfig:
    """A complete experiment: plant, readout chain, servo and run protocol."""

    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    plant: PlantSection = field(default_factory=PlantSection)
    modulation: ModulationSection = field(default_factory=ModulationSection)
    disturbance: DisturbanceSection = field(default_factory=DisturbanceSection)
    bandpass: BandpassSection = field(default_factory=BandpassSection)
    envelope: EnvelopeSection = field(default_factory=EnvelopeSection)
    lockin: LockInSection = field(default_factory=LockInSection)
    servo: ServoSection = field(default_factory=ServoSection)
    run: RunSection = field(default_factory=RunSection)
    tolerances: TolerancesSection = field(default_factory=TolerancesSection)

    # ------------------------------------------------------------ scaled views

    @property
    def scale(self):
        return self.experiment.scale_factor

    def hz(self, f):
        return f * self.scale

    def seconds(self, t):
        return t / self.scale

    @property
    def fs(self):
        return self.hz(self.run.fs)

    @property
    def duration(self):
        return self.seconds(self.run.duration)

    @property
    def settle(self):
        return self.seconds(self.run.settle)

    def squeezed_spec(self, squeeze_factor=None, loss_lambda=None):
        p = self.plant
        return SqueezedStateSpec(
            p.squeeze_factor if squeeze_factor is None else squeeze_factor,
            p.squeezed_quadrature,
            p.loss_lambda if loss_lambda is None else loss_lambda,
        )

    def coherent_spec(self):
        p = self.plant
        return CoherentPairSpec.from_visibility(p.visibility, p.total_power, p.dc_scale * math.sqrt(self.scale))

    def modulation_spec(self, theta0=None):
        m = self.modulation
        return ModulationSpec(
            theta0=m.theta0 if theta0 is None else theta0,
            theta1=m.theta1,
            omega_mod=2 * math.pi * self.hz(m.freq_hz),
            demod_phase=m.demod_phase,
        )

    def disturbance_spec(self):
        d = self.disturbance
        return DisturbanceSpec(
            d.kind,
            freq=self.hz(d.freq),
            amplitude=d.amplitude,
            diffusion=self.hz(d.diffusion),
            rate=self.hz(d.rate),
        )

    def synthesis(self, seed=None, **changes):
        """Scaled :class:`SynthesisConfig`; keyword ``changes`` override fields."""
        p = self.plant
        cfg = SynthesisConfig(
            mode=p.mode,
            squeezed=self.squeezed_spec(),
            coherent=self.coherent_spec(),
            port=p.port,
            modulation=self.modulation_spec(),
            disturbance=self.disturbance_spec(),
            fs=self.fs,
            duration=self.duration,
            seed=self.experiment.seed if seed is None else seed,
            signal_amp=p.signal_amp,
            lo_amp=p.lo_amp,
            classical_level=p.classical_level,
            classical_ref_freq=self.hz(p.classical_ref_freq),
        )
        return cfg.replace(**changes) if changes else cfg

    def chain(self, f_high=None):
        b, e, li = self.bandpass, self.envelope, self.lockin
        return DspChainConfig(
            BandpassConfig(self.hz(b.f_low), self.hz(b.f_high if f_high is None else f_high),
                           b.low_rollup_order, b.high_order),
            EnvelopeConfig(self.hz(e.cutoff), e.law, e.gain_calibration),
            LockInConfig(self.seconds(li.time_constant), li.slope),
        )  # fmt: skip

    def servo_config(self, synth=None, chain=None, lock_point=None):
        """Servo for ``lock_point``; gains left as ``auto`` are designed from the UGF."""
        s = self.servo
        synth = synth or self.synthesis()
        chain = chain or self.chain()
        lp = s.lock_point if lock_point is None else LockPoint(lock_point)
        extra = dict(
            limit=s.limit,
            engage_time=self.seconds(s.engage_time),
            ramp_rate=self.hz(s.ramp_rate),
        )
        designed = design_servo(synth, chain, self.hz(s.ugf_hz), lp, source=s.error_source, **extra)
        changes = {k: getattr(s, k) for k in ("kp", "ki", "sign") if getattr(s, k) is not None}
        return designed.replace(**changes) if changes else designed

    def validate(self):
        """Check cross-field constraints by building every scaled object."""
        try:
            synth = self.synthesis()
            chain = self.chain()
            chain.validate(synth.fs, synth.modulation.freq_hz)
            for bw in self.run.bandwidths:
                self.chain(f_high=self.bandpass.f_low + bw).validate(synth.fs, synth.modulation.freq_hz)
            if self.servo.sign not in (None, 1, -1):
                raise ValueError("servo sign must be +1, -1 or auto")
            if self.lockin.slope not in (6, 12):
                raise ValueError("lock-in slope must be 6 or 12 dB/octave")
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self


_SECTIONS = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def _resolve(tp):
    """Return ``(base type, optional?)`` for a field annotation."""
    if isinstance(tp, str):
        tp = eval(tp, globals())  # annotations are plain names from this module
    args = typing.get_args(tp)
    if args and type(None) in args:
        return next(a for a in args if a is not type(None)), True
    return tp, False


def _parse_value(raw, tp):
    base, optional = _resolve(tp)
    text = raw.strip()
    if optional and text.lower() in ("auto", "none", ""):
        return None
    if base is tuple:
        return tuple(float(v) for v in text.split(",") if v.strip())
    if base is bool:
        if text.lower() in ("true", "yes", "1"):
            return True
        if text.lower() in ("false", "no", "0"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if base is int:
        f = float(text)
        if f != int(f):
            raise ValueError(f"expected an integer, got {text!r}")
        return int(f)
    if base is float:
        return float(text)
    if isinstance(base, type) and issubclass(base, Enum):
        try:
            return base(text)
        except ValueError:
            allowed = ", ".join(m.value for m in base)
            raise ValueError(f"expected one of {{{allowed}}}, got {text!r}") from None
    return text


def _check_bounds(name, value, meta):
    choices = meta.get("choices")
    if choices is not None and value not in choices:
        raise ValueError(f"{name} = {value} must be one of {choices}")
    b = meta.get("bounds")
    if b is None or value is None:
        return
    lo, hi, lo_incl, hi_incl = b
    ok = True
    if lo is not None:
        ok &= value >= lo if lo_incl else value > lo
    if hi is not None:
        ok &= value <= hi if hi_incl else value < hi
    if not ok:
        left = "[" if lo_incl else "("
        right = "]" if hi_incl else ")"
        rng = f"{left}{'-inf' if lo is None else lo}, {'inf' if hi is None else hi}{right}"
        raise ValueError(f"{name} = {value} is out of range {rng}")


def parse_config(text):
    """Parse configuration text into a validated :class:`ExperimentConfig`."""
    values = {name: {} for name in _SECTIONS}
    section = None
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError(f"malformed section header {stripped!r}", lineno)
            section = stripped[1:-1].strip()
            if section not in _SECTIONS:
                raise ConfigError(f"unknown section [{section}]; expected one of {sorted(_SECTIONS)}", lineno)
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected 'key = value', got {stripped!r}", lineno)
        if section is None:
            raise ConfigError("key outside of any [section]", lineno)
        key, _, raw = stripped.partition("=")
        key = key.strip()
        fields = {f.name: f for f in dataclasses.fields(_SECTIONS[section])}
        if key not in fields:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno)
        if key in values[section]:
            raise ConfigError(f"duplicate key {key!r} in [{section}]", lineno)
        f = fields[key]
        try:
            value = _parse_value(raw, f.type)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}", lineno) from None
        try:
            _check_bounds(key, value, f.metadata)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {exc}", lineno) from None
        values[section][key] = (value, lineno)

    sections = {}
    for name, cls in _SECTIONS.items():
        kwargs = {k: v for k, (v, _) in values[name].items()}
        try:
            sections[name] = cls(**kwargs)
        except (TypeError, ValueError) as exc:
            line = min((ln for _, ln in values[name].values()), default=0)
            raise ConfigError(f"[{name}] {exc}", line) from None
    cfg = ExperimentConfig(**sections)
    if cfg.bandpass.f_high <= cfg.bandpass.f_low:
        line = values["bandpass"].get("f_high", (None, 0))[1]
        raise ConfigError("f_high must exceed f_low", line)
    return cfg.validate()


def _format_value(v):
    if v is None:
        return "auto"
    if isinstance(v, Enum):
        return v.value
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    return str(v)


def emit_config(cfg):
    """Render ``cfg`` in the file format; ``parse_config`` reads it back unchanged."""
    out = []
    for name in _SECTIONS:
        sec = getattr(cfg, name)
        out.append(f"[{name}]")
        for f in dataclasses.fields(sec):
            out.append(f"{f.name} = {_format_value(getattr(sec, f.name))}")
        out.append("")
    return "\n".join(out)


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())
