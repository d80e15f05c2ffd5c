import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special

from noiselock.analytic import (
    bessel_j0_j1,
    error_signal_coherent,
    error_signal_homodyne,
    kurtosis_of_variance,
    squeeze_and_loss_from_db,
    stability_coherent,
    stability_homodyne,
    stability_homodyne_scaled,
    variances_for,
    variances_from_db,
)
from noiselock import rng
from noiselock.plant import CoherentPairSpec, QuadratureVariances

V041 = QuadratureVariances(0.4404, 2.2705)


@pytest.mark.parametrize("x", [0.0, 0.045, 0.1, 0.5, 1.0, 2.4, 7.0, -3.0])
def test_bessel_against_scipy(x):
    j0, j1 = bessel_j0_j1(x)
    assert j0 == pytest.approx(special.j0(x), rel=1e-12, abs=1e-14)
    assert j1 == pytest.approx(special.j1(x), rel=1e-12, abs=1e-14)


def test_bessel_reference_values():
    assert bessel_j0_j1(0.0) == (1.0, 0.0)
    assert bessel_j0_j1(0.045) == pytest.approx((0.99949, 0.0224943), abs=5e-6)
    assert bessel_j0_j1(1.0) == pytest.approx((0.7651976866, 0.4400505857), abs=1e-10)


def test_homodyne_error_examples():
    th = np.linspace(0, 2 * np.pi, 50)
    assert np.all(error_signal_homodyne(QuadratureVariances(1, 1), th, 0.045) == 0)
    assert error_signal_homodyne(V041, 0.0, 0.045) == 0.0
    expected = special.j0(0.045) * special.j1(0.045) * (0.4404 - 2.2705)
    assert error_signal_homodyne(V041, math.pi / 4, 0.045) == pytest.approx(expected, rel=1e-12)
    assert error_signal_homodyne(V041, math.pi / 4, 0.045) == pytest.approx(-0.04115, abs=1e-5)


def test_coherent_error_examples():
    pair = CoherentPairSpec(1, 1)
    assert error_signal_coherent(pair, math.pi / 2, 0.045) == pytest.approx(0, abs=1e-17)
    assert error_signal_coherent(pair, 0.0, 0.045) == pytest.approx(0.0224943, abs=1e-7)
    assert np.all(error_signal_coherent(CoherentPairSpec(0, 1), np.linspace(0, 6, 20), 0.045) == 0)


def test_kurtosis_examples():
    assert kurtosis_of_variance(1.0) == pytest.approx(1.41421, abs=1e-5)
    assert kurtosis_of_variance(0.0) == 0.0
    assert kurtosis_of_variance(2.2705) == pytest.approx(3.2110, abs=1e-4)


def test_kurtosis_monte_carlo_oracle():
    v = 2.2705
    x = math.sqrt(v) * rng.standard_normal(42, 1_000_000)
    d = x - x.mean()
    mc = math.sqrt(np.mean(d**4) - np.mean(d**2) ** 2)
    assert mc == pytest.approx(kurtosis_of_variance(v), rel=0.01)


def test_stability_examples():
    assert stability_homodyne(V041) == pytest.approx((0.5834, 1.3246), abs=1e-4)
    sq, anti = stability_homodyne(V041)
    assert sq / anti == pytest.approx(math.sqrt(0.4404 / 2.2705), rel=1e-12)
    assert sq / anti == pytest.approx(0.4404, abs=2e-4)
    sq_big, _ = stability_homodyne(QuadratureVariances(1.0, 1e12))
    assert sq_big < 1e-5


def test_scaled_stability_examples():
    # the quoted 0.4907 is a rounding of sqrt(1/(e^1.64 - 1)) = 0.49058
    sq, _ = stability_homodyne_scaled(0.41, 0.0, 2.0)
    assert sq == pytest.approx(math.sqrt(1 / math.expm1(1.64)), rel=1e-12)
    assert sq == pytest.approx(0.4907, abs=5e-4)
    _, anti = stability_homodyne_scaled(8.0, 0.0, 2.0)
    assert anti == pytest.approx(1.0, abs=1e-6)
    # unit bandwidth product: the high-R limit is 2^(1/4)
    _, anti1 = stability_homodyne_scaled(8.0, 0.0, 1.0)
    assert anti1 == pytest.approx(2**0.25, abs=1e-6)


def test_scaled_matches_unscaled_form():
    for r, lam in ((0.41, 0.0), (0.8, 0.3), (1.5, 0.7)):
        v = variances_for(r, lam)
        direct = stability_homodyne(v)
        # the two forms differ only by a bandwidth prefactor shared by both lock points
        sq, anti = stability_homodyne_scaled(r, lam, 2.0)
        k = direct[0] / sq
        assert direct[1] / anti == pytest.approx(k, rel=1e-12)


def test_coherent_stability_examples():
    assert stability_coherent(CoherentPairSpec(1, 1), 1.0) == pytest.approx((0.0, 2.3784), abs=1e-4)
    assert stability_coherent(CoherentPairSpec(1, 1), 1.0)[1] == pytest.approx(math.sqrt(4 * math.sqrt(2)))


@given(a=st.floats(0.1, 10), b=st.floats(0.1, 10), n=st.floats(0.1, 1e6))
def test_bright_dark_ratio_identity(a, b, n):
    if abs(a - b) < 1e-3:
        return
    dark, bright = stability_coherent(CoherentPairSpec(a, b), n)
    assert bright / dark == pytest.approx((a + b) / abs(a - b), rel=1e-9)


@given(v1=st.floats(0.01, 10), d=st.floats(0.01, 10), theta1=st.floats(0.001, 0.1))
def test_homodyne_slopes_opposite_at_crossings(v1, d, theta1):
    v = QuadratureVariances(v1, v1 + d)
    h = 1e-6
    s0 = (error_signal_homodyne(v, h, theta1) - error_signal_homodyne(v, -h, theta1)) / (2 * h)
    s1 = (error_signal_homodyne(v, math.pi / 2 + h, theta1) - error_signal_homodyne(v, math.pi / 2 - h, theta1)) / (
        2 * h
    )
    assert s0 == pytest.approx(-s1, rel=1e-5)
    assert s0 * s1 < 0


@given(r=st.floats(0.01, 3), lam=st.floats(0, 0.99), n=st.floats(0.1, 1e6))
def test_squeezed_always_more_stable(r, lam, n):
    sq, anti = stability_homodyne_scaled(r, lam, n)
    assert sq < anti


@given(r=st.floats(0.01, 2.5), dr=st.floats(0.01, 1), lam=st.floats(0, 0.98), n=st.floats(0.1, 1e5))
def test_stability_decreases_with_r(r, dr, lam, n):
    a = stability_homodyne_scaled(r, lam, n)
    b = stability_homodyne_scaled(r + dr, lam, n)
    assert b[0] < a[0] and b[1] < a[1]


@given(r=st.floats(0.01, 3), lam=st.floats(0, 0.9), dlam=st.floats(0.001, 0.09), n=st.floats(0.1, 1e5))
def test_stability_increases_with_loss(r, lam, dlam, n):
    a = stability_homodyne_scaled(r, lam, n)
    b = stability_homodyne_scaled(r, lam + dlam, n)
    assert b[0] > a[0] and b[1] > a[1]


@given(r=st.floats(0.01, 3), lam=st.floats(0, 0.99), n=st.floats(0.1, 1e5), k=st.floats(1.01, 100))
def test_bandwidth_scaling_exact(r, lam, n, k):
    a = stability_homodyne_scaled(r, lam, n)
    b = stability_homodyne_scaled(r, lam, k * n)
    assert b[0] / a[0] == pytest.approx(k**-0.25, rel=1e-12)
    assert b[1] / a[1] == pytest.approx(k**-0.25, rel=1e-12)
    pair = CoherentPairSpec(1.3, 0.7)
    ca, cb = stability_coherent(pair, n), stability_coherent(pair, k * n)
    assert cb[0] / ca[0] == pytest.approx(k**-0.25, rel=1e-12)
    assert cb[1] / ca[1] == pytest.approx(k**-0.25, rel=1e-12)


@given(v=st.floats(0, 1e6), c=st.floats(0, 1e3))
def test_kurtosis_homogeneous(v, c):
    assert kurtosis_of_variance(c * v) == pytest.approx(c * kurtosis_of_variance(v), rel=1e-12, abs=1e-300)


@given(sq_db=st.floats(-10, -0.1), anti_db=st.floats(0.1, 20))
def test_db_inversion_round_trip(sq_db, anti_db):
    if anti_db < -sq_db:
        # loss can only make the anti-squeezed level exceed the squeezed deficit
        return
    r, lam = squeeze_and_loss_from_db(sq_db, anti_db)
    v = variances_for(r, lam)
    assert 10 * math.log10(v.v1) == pytest.approx(sq_db, abs=1e-9)
    assert 10 * math.log10(v.v2) == pytest.approx(anti_db, abs=1e-9)


def test_db_helpers():
    v = variances_from_db(-1.0, 5.0)
    assert v.v1 == pytest.approx(10**-0.1)
    r, lam = squeeze_and_loss_from_db(-1.0, 5.0)
    assert (r, lam) == pytest.approx((1.1763, 0.7727), abs=1e-4)


def test_stability_rejects_degenerate_inputs():
    with pytest.raises(ValueError):
        stability_homodyne(QuadratureVariances(1, 1))
    with pytest.raises(ValueError):
        stability_homodyne_scaled(0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        stability_coherent(CoherentPairSpec(0, 1))
    with pytest.raises(ValueError):
        kurtosis_of_variance(-1)
