import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from twophoton import analytic, gdm
from twophoton.analytic import (
    SpectralGrid,
    consistency,
    f1_spectrum,
    p_alpha,
    p_beta,
    p_exponential_closed_form,
    p_overlap,
    rho_2424_quadrature,
    rho_a2a2_quadrature,
    spectral_grid,
    transmission,
    two_photon_spectral,
)
from twophoton.model import MoleculeParams
from twophoton.pulses import ExponentialDecay, Gaussian, SpectralGridError

rates = st.floats(0.2, 5.0)


@given(rates, rates, st.floats(-50, 50))
def test_transmission_bounded(g1, g2, w):
    p = MoleculeParams(g1, g2, g1, g2)
    assert abs(transmission(1, w, p)) <= 1 + 1e-12
    assert abs(transmission(2, w, p)) <= 1 + 1e-12


def test_transmission_impedance_matched():
    p = MoleculeParams(1.5, 1.5, 1.0, 1.0)
    assert abs(transmission(1, 0.0, p)) ** 2 == pytest.approx(1.0)
    assert abs(transmission(1, 1.5, p)) ** 2 == pytest.approx(0.5)
    assert abs(transmission(1, 0.0, MoleculeParams(1.0, 1e-12, 1, 1))) < 1e-5


@given(st.floats(0.05, 3.0), rates, rates)
def test_exponential_absorption_closed_form(k, g1, g2):
    # closed form by partial fractions of the Lorentzian product
    p = MoleculeParams(g1, g2, 1.0, 1.0)
    assert p_alpha(ExponentialDecay(kappa=k), p) == pytest.approx(p_exponential_closed_form(k, g1, g2), abs=1e-8)


def test_exponential_absorption_fig5_value(params):
    assert p_exponential_closed_form(0.2, 1.0, 1.0) == pytest.approx(10 / 11, abs=1e-15)
    assert p_alpha(ExponentialDecay(kappa=0.2), params) == pytest.approx(10 / 11, abs=1e-8)


def test_far_detuned_pulse_not_absorbed(params):
    # a narrow-band pulse far off resonance samples the Lorentzian tail g1 g2 / (d^2 + G^2/4)
    p = p_alpha(Gaussian(sigma=2.0, detuning=30.0), params)
    assert p == pytest.approx(1 / (900 + 1), rel=1e-2)
    assert p_alpha(Gaussian(sigma=2.0, detuning=60.0), params) < 1e-3


def test_gaussian_absorption_matches_direct_quadrature(params):
    pulse = Gaussian(sigma=0.7, detuning=0.4)
    f = lambda w: abs(pulse.spectrum_values(w)) ** 2 * abs(transmission(1, w, params)) ** 2
    want = integrate.quad(f, -np.inf, np.inf, epsabs=1e-13)[0]
    assert p_alpha(pulse, params) == pytest.approx(want, abs=1e-8)


def test_f1_at_zero_is_absorption(params):
    pulse = Gaussian(sigma=0.6)
    lags, f1 = f1_spectrum(pulse, params)
    mid = lags.size // 2
    assert lags[mid] == 0
    assert math.sqrt(2 * math.pi) * f1[mid].real == pytest.approx(p_alpha(pulse, params), abs=1e-8)


def test_f1_hermitian_symmetry(params):
    lags, f1 = f1_spectrum(Gaussian(sigma=0.8), params)
    np.testing.assert_allclose(f1[::-1], np.conj(f1), atol=1e-14)


def test_f1_matches_time_domain_fill_rate(params):
    pulse = ExponentialDecay(kappa=1.0)
    traj = gdm.integrate(0.0, 40.0, 1 / 200, (pulse, None), params)
    fill = params.gamma2 * traj.populations()[:, 1]
    lags, f1 = f1_spectrum(pulse, params)
    for w in (0.0, 0.5, -1.0, 2.0):
        k = int(np.argmin(np.abs(lags - w)))
        want = integrate.simpson(fill * np.exp(1j * lags[k] * traj.times), x=traj.times) / math.sqrt(2 * math.pi)
        assert abs(f1[k] - want) < 1e-4


def test_quadrature_limits(params):
    pulse = Gaussian(sigma=0.5)
    t0 = pulse.support()[0]
    assert rho_a2a2_quadrature(pulse, params, t=t0, t0=t0) == 0.0
    full = rho_a2a2_quadrature(pulse, params)
    assert full.rho_a2a2[-1] == pytest.approx(p_alpha(pulse, params), abs=1e-5)


def test_overlap_vanishes_for_long_delay(params):
    pa, pb = ExponentialDecay(kappa=1.0), Gaussian(sigma=0.5, delay=30.0)
    assert abs(p_overlap(pa, pb, params)) < 1e-3
    r = two_photon_spectral(ExponentialDecay(kappa=0.2), ExponentialDecay(kappa=0.2, delay=80.0), params)
    assert r.rho_2424 == pytest.approx(100 / 121, abs=1e-3)


def test_overlap_saturates_when_beta_first(params):
    pa, pb = Gaussian(sigma=0.5), Gaussian(sigma=0.5, delay=-6.0)
    r = two_photon_spectral(pa, pb, params)
    assert r.p_overlap == pytest.approx(r.p_alpha * r.p_beta, abs=1e-3)
    assert abs(r.rho_2424) < 1e-3


@settings(max_examples=10)
@given(st.floats(0.3, 2.0), st.floats(0.3, 2.0), st.floats(-3.0, 5.0))
def test_overlap_bounds(sa, sb, delay):
    params = MoleculeParams()
    r = two_photon_spectral(Gaussian(sigma=sa), Gaussian(sigma=sb, delay=delay), params)
    for p in (r.p_alpha, r.p_beta, r.rho_2424):
        assert -1e-6 <= p <= 1 + 1e-6
    assert -1e-5 <= r.p_overlap <= r.p_alpha * r.p_beta + 1e-5


@settings(max_examples=8)
@given(st.floats(0.3, 2.0), st.floats(0.2, 2.0), st.floats(-2.0, 4.0), st.floats(-1.0, 1.0))
def test_spectral_and_temporal_routes_agree(sa, k, delay, det):
    params = MoleculeParams()
    pa, pb = Gaussian(sigma=sa, detuning=det), ExponentialDecay(kappa=k, delay=delay)
    c = consistency(pa, pb, params)
    assert abs(c["difference"]) < 1e-4


@pytest.mark.parametrize(
    "pulses, params",
    [
        ((Gaussian(sigma=0.5), Gaussian(sigma=0.5, delay=3.0)), MoleculeParams()),
        ((Gaussian(sigma=1.0), ExponentialDecay(kappa=0.5, delay=0.5)), MoleculeParams()),
        ((ExponentialDecay(kappa=0.5), ExponentialDecay(kappa=1.0, delay=1.0)), MoleculeParams()),
        # unequal rates catch a stray factor of gamma2 in the overlap term
        ((Gaussian(sigma=0.6), Gaussian(sigma=0.5, delay=1.0)), MoleculeParams(1.0, 0.5, 0.8, 1.6)),
    ],
)
def test_consistency_triangle_with_dynamics(params, pulses):
    spec = two_photon_spectral(*pulses, params).rho_2424
    temp = analytic.rho_2424_inf(*pulses, params)
    dyn = gdm.steady_state(pulses, params, dt=1 / 160).populations()[-1][4]
    assert abs(spec - temp) < 1e-4
    assert abs(spec - dyn) < 1e-4


def test_fig2_two_photon_probability(params):
    r = two_photon_spectral(Gaussian(sigma=0.5), Gaussian(sigma=0.5, delay=3.0), params)
    assert r.rho_2424 == pytest.approx(0.418, abs=0.01)


def test_time_domain_trajectory_matches_dynamics(params):
    pulses = (Gaussian(sigma=0.5), Gaussian(sigma=0.5, delay=0.5))
    tq = rho_2424_quadrature(*pulses, params)
    traj = gdm.integrate(tq.t[0], tq.t[-1], 1 / 160, pulses, params)
    f4 = np.interp(traj.times, tq.t, tq.rho_2424)
    assert np.max(np.abs(f4 - traj.populations()[:, 4])) < 1e-4


def test_grid_convergence(params):
    pa, pb = Gaussian(sigma=0.5), Gaussian(sigma=0.7, delay=0.3)
    base = spectral_grid(params, pa, pb)
    fine = SpectralGrid(np.linspace(base.w[0], base.w[-1], 2 * base.w.size - 1))
    a = two_photon_spectral(pa, pb, params, base).rho_2424
    b = two_photon_spectral(pa, pb, params, fine).rho_2424
    assert abs(a - b) < 2e-5


def test_grid_too_narrow_rejected(params):
    grid = SpectralGrid(np.linspace(-3, 3, 601))
    with pytest.raises(SpectralGridError):
        p_alpha(ExponentialDecay(kappa=1.0), params, grid)


def test_principal_value_failure_reported(params):
    with pytest.raises(analytic.PrincipalValueError):
        analytic.p_ab(Gaussian(sigma=0.5), Gaussian(sigma=0.5), params, max_halvings=0)


def test_p_beta_uses_second_transition():
    p = MoleculeParams(1.0, 1.0, 3.0, 0.5)
    pulse = ExponentialDecay(kappa=0.4)
    assert p_beta(pulse, p) == pytest.approx(p_exponential_closed_form(0.4, 3.0, 0.5), abs=1e-8)
