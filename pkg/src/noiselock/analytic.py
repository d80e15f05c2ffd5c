"""Closed-form error signals and lock-stability predictions.

These are the oracles the simulation is checked against. Stabilities are in
radians. Wherever the detection bandwidth enters under a fourth root it is
represented by the dimensionless ``bandwidth_product``: the number of
independent noise samples inside the error-point averaging time (2 B T for a
real band of width B averaged over T).
"""

import math
import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .plant import SMALL_DEPTH_LIMIT, QuadratureVariances, quadrature_variances, SqueezedStateSpec

# Bessel series: the k-th term of J_n(x) is bounded by (x/2)^(2k+n)/(k!(k+n)!);
# for |x| <= 10 the terms fall below 1e-17 of the leading magnitude by k = 40.
_BESSEL_TERMS = 60


class LockPoint(str, Enum):
    SQUEEZED = "squeezed"
    ANTI_SQUEEZED = "anti_squeezed"
    DARK_FRINGE = "dark_fringe"
    BRIGHT_FRINGE = "bright_fringe"


# nominal phase of each lock point (amplitude-quadrature squeezing, port d)
LOCK_PHASE = {
    LockPoint.SQUEEZED: math.pi / 2,
    LockPoint.ANTI_SQUEEZED: 0.0,
    LockPoint.DARK_FRINGE: 3 * math.pi / 2,
    LockPoint.BRIGHT_FRINGE: math.pi / 2,
}


@dataclass(frozen=True)
class StabilityPrediction:
    delta_theta: float
    lock_point: LockPoint
    bandwidth_factor: float = 1.0

    def __post_init__(self):
        if not self.delta_theta >= 0:
            raise ValueError("delta_theta must be >= 0")


@dataclass(frozen=True)
class ErrorSignalCurve:
    """Error signal sampled on a grid of average phases (arbitrary units)."""

    theta0: np.ndarray
    epsilon: np.ndarray
    stderr: np.ndarray | None = None

    def zero_crossings(self):
        """Linearly interpolated sign changes of the curve."""
        th, ep = np.asarray(self.theta0), np.asarray(self.epsilon)
        out = []
        for i in range(len(th) - 1):
            a, b = ep[i], ep[i + 1]
            if a == 0:
                out.append(th[i])
            elif a * b < 0:
                out.append(th[i] - a * (th[i + 1] - th[i]) / (b - a))
        if ep[-1] == 0:
            out.append(th[-1])
        return np.array(out)


def bessel_j0_j1(x):
    """Bessel functions of the first kind, orders 0 and 1, by power series.

    Accurate to about 1e-14 relative for ``|x| <= 10``.
    """
    x = float(x)
    if abs(x) > 10:
        raise ValueError(f"|x| must be <= 10 for the series evaluation, got {x}")
    q = -(x * x) / 4.0
    t0 = 1.0
    t1 = x / 2.0
    j0 = t0
    j1 = t1
    for k in range(1, _BESSEL_TERMS):
        t0 *= q / (k * k)
        t1 *= q / (k * (k + 1))
        j0 += t0
        j1 += t1
        if abs(t0) < 1e-18 and abs(t1) < 1e-18:
            break
    return j0, j1


def _check_depth(theta1):
    if theta1 > SMALL_DEPTH_LIMIT:
        warnings.warn(
            f"dither depth {theta1} rad exceeds the small-depth bound {SMALL_DEPTH_LIMIT} rad",
            stacklevel=3,
        )


def error_signal_homodyne(variances, theta0, theta1, lo_amp=1.0, bandwidth=1.0):
    """Noise-locking error signal of a squeezed vacuum on a homodyne detector.

    ``b^2 J0(theta1) J1(theta1) sin(2 theta0) (V1 - V2) bandwidth``; it vanishes
    at theta0 = 0 and pi/2 and everywhere when the quadratures are symmetric.
    """
    _check_depth(theta1)
    j0, j1 = bessel_j0_j1(theta1)
    return lo_amp**2 * j0 * j1 * np.sin(2 * np.asarray(theta0)) * (variances.v1 - variances.v2) * bandwidth


def error_signal_coherent(pair, theta0, theta1, bandwidth=1.0):
    """Noise-locking error signal for two interfering coherent fields: ``a b J1 cos(theta0)``."""
    _, j1 = bessel_j0_j1(theta1)
    return pair.amp_a * pair.amp_b * j1 * np.cos(np.asarray(theta0)) * bandwidth


def error_curve_homodyne(variances, theta1, n=361, **kw):
    th = np.linspace(0, 2 * np.pi, n)
    return ErrorSignalCurve(th, error_signal_homodyne(variances, th, theta1, **kw))


def error_curve_coherent(pair, theta1, n=361, **kw):
    th = np.linspace(0, 2 * np.pi, n)
    return ErrorSignalCurve(th, error_signal_coherent(pair, th, theta1, **kw))


def kurtosis_of_variance(v):
    """Spread of the squared photocurrent, sqrt(m4 - m2^2), for Gaussian noise of variance ``v``."""
    if v < 0:
        raise ValueError("variance must be >= 0")
    return math.sqrt(2.0) * v


def stability_homodyne(variances):
    """Phase stability at the squeezed and anti-squeezed lock points.

    Returns ``(dtheta_squeezed, dtheta_antisqueezed)`` with the anti-squeezed
    quadrature labelled ``v2``.
    """
    v1, v2 = variances.v1, variances.v2
    if v1 == v2:
        raise ValueError("symmetric quadratures give no error signal; stability undefined")
    if v2 < v1:
        raise ValueError("expected v2 > v1 (anti-squeezed quadrature labelled v2)")
    d = v2 - v1
    return math.sqrt(math.sqrt(2) * v1 / d), math.sqrt(math.sqrt(2) * v2 / d)


def stability_homodyne_scaled(squeeze_factor, loss_lambda, bandwidth_product):
    """Stability of both lock points versus squeeze factor, loss and bandwidth.

    Returns ``(dtheta_squeezed, dtheta_antisqueezed)``.
    """
    r, lam, n = squeeze_factor, loss_lambda, bandwidth_product
    if r <= 0:
        raise ValueError("squeeze factor must be > 0")
    if not 0 <= lam < 1:
        raise ValueError("loss must lie in [0, 1)")
    if n <= 0:
        raise ValueError("bandwidth_product must be > 0")
    g = lam / (1 - lam)
    bw = (2.0 / n) ** 0.25
    sq = math.sqrt((1 + g * math.exp(2 * r)) / (math.exp(4 * r) - 1)) * bw
    anti = math.sqrt((1 + g * math.exp(-2 * r)) / (1 - math.exp(-4 * r))) * bw
    return sq, anti


def stability_coherent(pair, bandwidth_product=1.0):
    """Phase stability locked to the dark and bright fringes: ``(dark, bright)``."""
    a, b = pair.amp_a, pair.amp_b
    if a <= 0 or b <= 0:
        raise ValueError("both field amplitudes must be > 0")
    if bandwidth_product <= 0:
        raise ValueError("bandwidth_product must be > 0")
    bw = (1.0 / bandwidth_product) ** 0.25
    dark = math.sqrt(math.sqrt(2) * (a - b) ** 2 / (a * b)) * bw
    bright = math.sqrt(math.sqrt(2) * (a + b) ** 2 / (a * b)) * bw
    return dark, bright


def predict_homodyne(spec, bandwidth_product=1.0):
    """Both homodyne predictions as :class:`StabilityPrediction` objects."""
    sq, anti = stability_homodyne_scaled(spec.squeeze_factor, spec.loss_lambda, bandwidth_product)
    f = (2.0 / bandwidth_product) ** 0.25
    return (
        StabilityPrediction(sq, LockPoint.SQUEEZED, f),
        StabilityPrediction(anti, LockPoint.ANTI_SQUEEZED, f),
    )


def variances_for(squeeze_factor, loss_lambda=0.0):
    """Shortcut: amplitude-squeezed variances for ``(R, lambda)``."""
    return quadrature_variances(SqueezedStateSpec(squeeze_factor, "amplitude", loss_lambda))


def variances_from_db(squeezed_db, antisqueezed_db):
    """Variances from measured noise levels relative to the SNL (dB)."""
    return QuadratureVariances(10 ** (squeezed_db / 10), 10 ** (antisqueezed_db / 10))


def squeeze_and_loss_from_db(squeezed_db, antisqueezed_db):
    """Invert the loss transform: ``(R, lambda)`` reproducing measured noise levels.

    Needs ``squeezed_db < 0 < antisqueezed_db``.
    """
    a = 10 ** (squeezed_db / 10)
    b = 10 ** (antisqueezed_db / 10)
    if not a < 1 < b:
        raise ValueError("need a squeezed level below and an anti-squeezed level above the SNL")
    # mu (1/x - 1) = a - 1 and mu (x - 1) = b - 1 with x = exp(2R), mu = 1 - lambda
    x = (b - 1) / (1 - a)
    mu = (b - 1) / (x - 1)
    return 0.5 * math.log(x), 1.0 - mu
