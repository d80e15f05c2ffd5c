"""Gaussian statistical model of the optical plant.

All variances are dimensionless ratios to the shot-noise limit (SNL = 1).
"""

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import rng

# small-depth validity bound for the Bessel expansion of the dither
SMALL_DEPTH_LIMIT = 0.2


class Quadrature(str, Enum):
    AMPLITUDE = "amplitude"
    PHASE = "phase"


class Port(str, Enum):
    C = "c"
    D = "d"


class DisturbanceKind(str, Enum):
    NONE = "none"
    SINUSOID = "sinusoid"
    RANDOM_WALK = "random_walk"
    CONSTANT_DRIFT = "constant_drift"


@dataclass(frozen=True)
class SqueezedStateSpec:
    """Squeezed vacuum entering the signal port of the homodyne detector.

    Parameters
    ----------
    squeeze_factor : float
        Squeeze factor R >= 0; pure-state variances are exp(-2R), exp(2R).
    squeezed_quadrature : Quadrature
        Which quadrature carries the reduced variance.
    loss_lambda : float
        Lumped optical and detection loss in [0, 1).
    """

    squeeze_factor: float = 0.0
    squeezed_quadrature: Quadrature = Quadrature.AMPLITUDE
    loss_lambda: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "squeezed_quadrature", Quadrature(self.squeezed_quadrature))
        if not (math.isfinite(self.squeeze_factor) and self.squeeze_factor >= 0):
            raise ValueError(f"squeeze_factor must be >= 0, got {self.squeeze_factor}")
        if not (0.0 <= self.loss_lambda < 1.0):
            raise ValueError(f"loss_lambda must lie in [0, 1), got {self.loss_lambda}")


@dataclass(frozen=True)
class QuadratureVariances:
    """Amplitude (``v1``) and phase (``v2``) quadrature variances, SNL = 1."""

    v1: float
    v2: float

    def __post_init__(self):
        if not (self.v1 > 0 and self.v2 > 0):
            raise ValueError(f"variances must be positive, got ({self.v1}, {self.v2})")

    @property
    def asymmetry(self):
        return self.v2 - self.v1


@dataclass(frozen=True)
class CoherentPairSpec:
    """Two coherent fields interfering on a balanced beamsplitter.

    ``dc_scale`` converts fringe power into mean photocurrent in shot-noise
    units; physically it is sqrt(photon rate / 2) for unit fringe power. It only
    matters for readouts of the mean (the idealised coherent modulation lock).
    """

    amp_a: float = 1.0
    amp_b: float = 1.0
    dc_scale: float = 1.0

    def __post_init__(self):
        if not (self.amp_a >= 0 and self.amp_b >= 0):
            raise ValueError("field amplitudes must be >= 0")
        if not self.dc_scale >= 0:
            raise ValueError("dc_scale must be >= 0")

    @property
    def visibility(self):
        tot = self.amp_a**2 + self.amp_b**2
        if tot == 0:
            return 0.0
        return 2.0 * self.amp_a * self.amp_b / tot

    @classmethod
    def from_visibility(cls, visibility, total_power=1.0, dc_scale=1.0):
        """Amplitudes with ``a >= b`` giving the requested fringe visibility."""
        if not 0.0 <= visibility <= 1.0:
            raise ValueError(f"visibility must lie in [0, 1], got {visibility}")
        # a^2 + b^2 = P, 2ab = vP  ->  (a +- b)^2 = P(1 +- v)
        s = math.sqrt(total_power * (1 + visibility))
        d = math.sqrt(total_power * (1 - visibility))
        return cls((s + d) / 2, (s - d) / 2, dc_scale)


@dataclass(frozen=True)
class ModulationSpec:
    """Phase dither theta(t) = theta0 + theta1 sin(omega_mod t).

    ``demod_phase`` is the lock-in reference phase; ``None`` means "compensate
    the envelope filter lag", which the readout chain resolves.
    """

    theta0: float = 0.0
    theta1: float = 0.1
    omega_mod: float = 2 * math.pi * 197.0
    demod_phase: float | None = None

    def __post_init__(self):
        if not self.theta1 >= 0:
            raise ValueError(f"theta1 must be >= 0, got {self.theta1}")
        if not self.omega_mod > 0:
            raise ValueError(f"omega_mod must be > 0, got {self.omega_mod}")

    @property
    def freq_hz(self):
        return self.omega_mod / (2 * math.pi)

    @property
    def small_depth_valid(self):
        return self.theta1 <= SMALL_DEPTH_LIMIT


@dataclass(frozen=True)
class DisturbanceSpec:
    """Additive phase disturbance.

    ``freq`` and ``amplitude`` apply to ``sinusoid``, ``diffusion`` (rad^2/s)
    to ``random_walk`` and ``rate`` (rad/s) to ``constant_drift``.
    """

    kind: DisturbanceKind = DisturbanceKind.NONE
    freq: float = 0.0
    amplitude: float = 0.0
    diffusion: float = 0.0
    rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", DisturbanceKind(self.kind))
        if self.diffusion < 0:
            raise ValueError(f"random-walk diffusion must be >= 0, got {self.diffusion}")

    @classmethod
    def random_walk(cls, diffusion):
        return cls(DisturbanceKind.RANDOM_WALK, diffusion=diffusion)

    @classmethod
    def sinusoid(cls, freq, amplitude):
        return cls(DisturbanceKind.SINUSOID, freq=freq, amplitude=amplitude)

    @classmethod
    def drift(cls, rate):
        return cls(DisturbanceKind.CONSTANT_DRIFT, rate=rate)


def quadrature_variances(spec):
    """Quadrature variances of a squeezed vacuum after lumped loss.

    Parameters
    ----------
    spec : SqueezedStateSpec

    Returns
    -------
    QuadratureVariances
        ``(1-l) exp(-2R) + l`` on the squeezed quadrature and
        ``(1-l) exp(2R) + l`` on the other one.
    """
    lam = spec.loss_lambda
    sq = (1 - lam) * math.exp(-2 * spec.squeeze_factor) + lam
    anti = (1 - lam) * math.exp(2 * spec.squeeze_factor) + lam
    if spec.squeezed_quadrature is Quadrature.AMPLITUDE:
        return QuadratureVariances(sq, anti)
    return QuadratureVariances(anti, sq)


def homodyne_variance(variances, theta):
    """Difference-photocurrent variance at homodyne angle ``theta`` (LO-dominated limit)."""
    s = np.sin(theta)
    c = np.cos(theta)
    return variances.v1 * s * s + variances.v2 * c * c


def homodyne_variance_exact(signal, theta, amp_a, amp_b, lo=None):
    """Two-field form of the homodyne noise power, normalised to the SNL.

    ``signal`` and ``lo`` are the quadrature variances of the signal field and
    local oscillator (vacuum-level LO noise when ``lo`` is None). The result is
    divided by ``amp_a**2 + amp_b**2`` so that vacuum inputs give exactly 1;
    for ``amp_a << amp_b`` it reduces to :func:`homodyne_variance`.
    """
    return homodyne_variance(effective_variances(signal, amp_a, amp_b, lo), theta)


def effective_variances(signal, amp_a, amp_b, lo=None):
    """Fold the two-field homodyne form into a single pair of variances."""
    if lo is None:
        lo = QuadratureVariances(1.0, 1.0)
    tot = amp_a**2 + amp_b**2
    if tot <= 0:
        raise ValueError("at least one field amplitude must be non-zero")
    w_a = amp_b**2 / tot
    w_b = amp_a**2 / tot
    return QuadratureVariances(w_a * signal.v1 + w_b * lo.v1, w_a * signal.v2 + w_b * lo.v2)


def fringe_power(pair, theta, port="d"):
    """Mean optical power on one beamsplitter output port.

    Port ``d`` carries ``(a^2 + b^2 + 2ab sin(theta)) / 2`` and port ``c`` the
    complementary fringe. Shot-noise variance of the port photocurrent is equal
    to this power in SNL units.
    """
    sgn = 1.0 if Port(port) is Port.D else -1.0
    a, b = pair.amp_a, pair.amp_b
    p = 0.5 * (a * a + b * b + sgn * 2 * a * b * np.sin(theta))
    return np.maximum(p, 0.0)


def dither(mod, fs, n, start=0):
    """Dither term ``theta1 sin(omega_mod k / fs)`` for sample indices ``start..start+n-1``."""
    k = np.arange(start, start + n, dtype=float)
    return mod.theta1 * np.sin(mod.omega_mod * k / fs)


class DisturbanceGenerator:
    """Streams disturbance samples block by block.

    Random-walk increments come from the counter-based generator, so splitting
    a record into blocks gives the same samples as one long call.
    """

    def __init__(self, spec, fs, seed):
        self.spec = spec
        self.fs = float(fs)
        self.seed = int(seed)
        self.position = 0
        self._walk = 0.0

    def next(self, n):
        spec, fs, k0 = self.spec, self.fs, self.position
        self.position += n
        kind = spec.kind
        if kind is DisturbanceKind.NONE:
            return np.zeros(n)
        if kind is DisturbanceKind.SINUSOID:
            k = np.arange(k0, k0 + n, dtype=float)
            return spec.amplitude * np.sin(2 * np.pi * spec.freq * k / fs)
        if kind is DisturbanceKind.CONSTANT_DRIFT:
            k = np.arange(k0, k0 + n, dtype=float)
            return spec.rate * k / fs
        # random walk: the first sample is the origin, then sequential sums
        steps = math.sqrt(spec.diffusion / fs) * rng.standard_normal(
            self.seed, n, stream=rng.STREAM_DISTURBANCE, start=k0
        )
        acc = np.empty(n + 1)
        acc[0] = self._walk
        acc[1:] = steps
        walk = np.cumsum(acc)
        self._walk = walk[-1]
        return walk[:-1]


def phase_trajectory(mod, dist, control, fs, n, seed=0):
    """Sampled relative phase including dither, disturbance and actuator control.

    Parameters
    ----------
    mod : ModulationSpec
    dist : DisturbanceSpec
    control : array_like or None
        Control signal added at the actuator summing junction (radians).
    fs : float
        Sample rate in Hz; must exceed ``omega_mod / pi``.
    n : int
    seed : int

    Returns
    -------
    ndarray of shape (n,)
    """
    if not fs > mod.omega_mod / math.pi:
        raise ValueError(f"fs={fs} Hz does not resolve the dither at {mod.freq_hz} Hz")
    if control is None:
        control = np.zeros(n)
    control = np.asarray(control, dtype=float)
    if control.shape != (n,):
        raise ValueError(f"control must have shape ({n},), got {control.shape}")
    if not np.all(np.isfinite(control)):
        raise ValueError("control contains non-finite samples")
    free = mod.theta0 + dither(mod, fs, n) + DisturbanceGenerator(dist, fs, seed).next(n)
    return free + control
