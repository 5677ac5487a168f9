import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from twophoton.pulses import (
    EPS_G,
    ExponentialDecay,
    Gaussian,
    PulseError,
    SpectralGridError,
    Tabulated,
    check_normalized,
    coupling_from_envelope,
    envelope_from_coupling,
    spectrum,
)

sigmas = st.floats(0.1, 5.0)
kappas = st.floats(0.05, 5.0)
delays = st.floats(-5.0, 5.0)
detunings = st.floats(-3.0, 3.0)


def direct_spectrum(pulse, w, a, b, n=400001):
    """(2 pi)^-1/2 int_a^b u(t) e^{i w t} dt by brute-force quadrature."""
    t = np.linspace(a, b, n)
    u = np.asarray(pulse.amplitude(t))
    return np.array([integrate.simpson(u * np.exp(1j * x * t), x=t) for x in np.atleast_1d(w)]) / math.sqrt(2 * math.pi)


def test_exponential_values():
    p = ExponentialDecay(kappa=1.0)
    assert p.amplitude(1e-12) == pytest.approx(1.0)
    assert p.amplitude(-0.1) == 0
    assert p.amplitude(2.0) == pytest.approx(math.exp(-1.0))


def test_gaussian_peak():
    # analytic normalization, confirmed by quadrature below
    s = 0.7
    p = Gaussian(sigma=s, mu=1.3)
    assert abs(p.amplitude(1.3)) == pytest.approx((2 * math.pi * s * s) ** -0.25)
    assert check_normalized(p) == pytest.approx(1.0, abs=1e-9)


def test_gaussian_sigma_is_std_of_intensity():
    p = Gaussian(sigma=0.5)
    t = np.linspace(-6, 6, 40001)
    dens = np.abs(p.amplitude(t)) ** 2
    var = integrate.simpson(dens * t**2, x=t)
    assert math.sqrt(var) == pytest.approx(0.5, rel=1e-8)


@given(sigmas, delays, detunings)
def test_gaussian_normalized(s, d, det):
    check_normalized(Gaussian(sigma=s, delay=d, detuning=det), tol=1e-6)


@given(kappas, delays, detunings)
def test_exponential_normalized(k, d, det):
    check_normalized(ExponentialDecay(kappa=k, delay=d, detuning=det), tol=1e-6)


@pytest.mark.parametrize("bad", [dict(sigma=0.0), dict(sigma=-1.0), dict(sigma=float("inf"))])
def test_gaussian_rejects(bad):
    with pytest.raises(PulseError):
        Gaussian(**bad)


def test_exponential_rejects():
    with pytest.raises(PulseError):
        ExponentialDecay(kappa=0.0)


def test_exponential_spectrum_closed_form():
    k = 0.8
    w = np.linspace(-5, 5, 11)
    p = ExponentialDecay(kappa=k)
    np.testing.assert_allclose(np.abs(p.spectrum_values(w)) ** 2, (k / (2 * math.pi)) / (w**2 + k * k / 4), rtol=1e-12)


@pytest.mark.parametrize(
    "pulse, window",
    [
        (ExponentialDecay(kappa=1.5, delay=0.7, detuning=0.4), (0.7, 40.7)),
        (Gaussian(sigma=0.6, mu=0.2, delay=-1.0, detuning=-0.8), (-13.0, 11.0)),
    ],
)
def test_spectrum_matches_direct_transform(pulse, window):
    w = np.array([-2.0, -0.3, 0.0, 0.9, 2.5])
    np.testing.assert_allclose(pulse.spectrum_values(w), direct_spectrum(pulse, w, *window), atol=2e-6)


def test_tabulated_spectrum_matches_direct_transform():
    p = Tabulated.from_function(lambda t: np.exp(-t * t) * (1 + 0.3j * t), -5, 5, n=2001)
    w = np.array([-1.5, 0.0, 0.4, 2.0])
    np.testing.assert_allclose(p.spectrum_values(w), direct_spectrum(p, w, -5, 5), atol=1e-6)


@given(sigmas, delays)
def test_parseval(s, d):
    p = Gaussian(sigma=s, delay=d)
    w = np.linspace(-12 / s, 12 / s, 20001)
    assert spectrum(p, w).norm() == pytest.approx(1.0, abs=1e-6)


@given(kappas, st.floats(0.0, 4.0))
def test_delay_changes_only_spectral_phase(k, d):
    w = np.linspace(-3, 3, 13)
    a = ExponentialDecay(kappa=k).spectrum_values(w)
    b = ExponentialDecay(kappa=k, delay=d).spectrum_values(w)
    np.testing.assert_allclose(np.abs(a), np.abs(b), rtol=1e-12)
    np.testing.assert_allclose(b, a * np.exp(1j * w * d), rtol=1e-12, atol=1e-15)


@given(sigmas, delays)
def test_shift_covariance(s, d):
    p = Gaussian(sigma=s)
    t = np.linspace(-3, 3, 7)
    np.testing.assert_allclose(p.shifted(d).amplitude(t + d), p.amplitude(t), rtol=1e-12, atol=1e-15)


def test_spectrum_rejects_coarse_grid():
    with pytest.raises(SpectralGridError):
        spectrum(Gaussian(sigma=1.0, delay=50.0), np.linspace(-5, 5, 11))


def test_exponential_coupling_constant():
    p = ExponentialDecay(kappa=0.3, delay=1.0)
    np.testing.assert_allclose(p.coupling(np.array([1.5, 10.0, 100.0])), math.sqrt(0.3))
    assert p.coupling(0.5) == 0


def test_generic_coupling_matches_exponential():
    # the generic formula applied to an exponential envelope gives sqrt(kappa)
    p = ExponentialDecay(kappa=0.6)
    t = np.linspace(0.1, 20, 50)
    g = np.conj(p.amplitude(t)) / np.sqrt(p.remaining(t))
    np.testing.assert_allclose(g, math.sqrt(0.6), rtol=1e-10)


def test_coupling_zero_before_onset():
    assert coupling_from_envelope(ExponentialDecay(kappa=0.5, delay=2.0), 1.0) == 0
    assert abs(coupling_from_envelope(Gaussian(sigma=0.5, delay=2.0), -20.0)) < 1e-100


def test_constant_coupling_gives_exponential():
    k = 0.4
    t = np.linspace(0, 10, 21)
    u = envelope_from_coupling(lambda s: np.full(np.shape(s), math.sqrt(k), dtype=complex), t, 0.0)
    np.testing.assert_allclose(u, math.sqrt(k) * np.exp(-k * t / 2), rtol=1e-9)


def test_zero_coupling_gives_zero():
    t = np.linspace(0, 5, 6)
    assert np.all(envelope_from_coupling(lambda s: np.zeros(np.shape(s)), t, 0.0) == 0)


@given(sigmas, detunings)
def test_round_trip_gaussian(s, det):
    p = Gaussian(sigma=s, detuning=det)
    a, _ = p.support()
    ts = p.saturation_time()
    t = np.linspace(a, ts - 1e-9, 200)
    u = envelope_from_coupling(p.coupling, t, a, n=400001)
    np.testing.assert_allclose(u, p.amplitude(t), atol=1e-6)


def test_tabulated_coupling_recovers_gaussian():
    g = Gaussian(sigma=0.5)
    tab = Tabulated.from_function(g.amplitude, *g.support(), n=20001)
    a = g.support()[0]
    t = np.linspace(-1.5, 1.5, 31)
    u = envelope_from_coupling(tab.coupling, t, a, n=200001)
    np.testing.assert_allclose(u, g.amplitude(t), atol=1e-6)


def test_saturation_time():
    p = Gaussian(sigma=0.5, delay=1.0)
    assert p.remaining(p.saturation_time()) == pytest.approx(EPS_G, rel=1e-6)
    assert p.coupling(p.saturation_time() + 0.01) == 0
    assert math.isinf(ExponentialDecay(kappa=1.0).saturation_time())


def test_log_emission_is_minus_log_cavity_population():
    p = Gaussian(sigma=0.5)
    t = np.array([-1.0, 0.0, 0.5])
    np.testing.assert_allclose(p.log_emission(t), -np.log(p.remaining(t)))
    e = ExponentialDecay(kappa=0.2, delay=1.0)
    assert e.log_emission(6.0) == pytest.approx(1.0)


def test_tabulated_renormalizes_and_rejects():
    t = np.linspace(-5, 5, 2001)
    v = np.exp(-t * t / 2) * math.pi**-0.25 * 1.0002
    tab = Tabulated(times=t, values=v)
    assert check_normalized(tab, tol=1e-6) == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(PulseError):
        Tabulated(times=t, values=2 * v)
    with pytest.raises(PulseError):
        Tabulated(times=t[::-1], values=v)


def test_tabulated_csv(tmp_path):
    g = Gaussian(sigma=1.0, detuning=0.5)
    t = np.linspace(-7, 7, 3001)
    u = g.amplitude(t)
    path = tmp_path / "pulse.csv"
    path.write_text("t,re,im\n" + "\n".join(f"{a:.15g},{b.real:.15g},{b.imag:.15g}" for a, b in zip(t, u)))
    tab = Tabulated.from_csv(path, delay=1.0)
    assert tab.amplitude(1.3) == pytest.approx(g.amplitude(0.3), abs=1e-6)
    with pytest.raises(PulseError):
        bad = tmp_path / "bad.csv"
        bad.write_text("0,1,0\n")
        Tabulated.from_csv(bad)
