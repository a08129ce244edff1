import math

import numpy as np
import pytest
from scipy.constants import c, hbar, k as k_B

from sphereplane.materials import EV, PerfectReflector, Plasma, default_gold
from sphereplane.scattering import Geometry, static_kernel
from sphereplane.thermo import (
    Accuracy,
    ConvergenceError,
    Prescription,
    _Tally,
    _free_energy_T0,
    _five_point,
    force_and_gradient,
    free_energy,
    free_energy_T0,
    matsubara_frequency,
    natural_prescription,
    stencil_step,
    term,
    zero_freq_te_plasma,
    zero_freq_term,
    zero_freq_tm,
)

GOLD = default_gold()
PR = PerfectReflector()
FAST = Accuracy(eta=4.0, n_tol=1e-7, m_tol=1e-8, xi_order=16, xi_tol=None, stencil_check=False)


def test_matsubara_frequency():
    assert matsubara_frequency(3, 295.0) == pytest.approx(2 * math.pi * 3 * k_B * 295.0 / hbar, rel=1e-15)


def test_natural_prescription_and_pairing():
    assert natural_prescription(PR) is Prescription.PR
    assert natural_prescription(Plasma(9 * EV)) is Prescription.PLASMA
    assert natural_prescription(GOLD) is Prescription.DRUDE
    g = Geometry(5e-6, 1e-6)
    with pytest.raises(ValueError):
        free_energy(g, GOLD, 295.0, "pr", FAST)
    with pytest.raises(ValueError):
        free_energy(g, PR, 295.0, "drude", FAST)
    with pytest.raises(ValueError):
        free_energy(g, GOLD, 0.0, accuracy=FAST)


def test_accuracy_validation():
    for kw in ({"eta": 0}, {"m_tol": 0.0}, {"n_tol": 2.0}, {"xi_order": 1}, {"n_cap": 1}, {"xi_tol": 0.0}, {"step_min": 0.0}):
        with pytest.raises(ValueError):
            Accuracy(**kw)


def test_ledger_invariants():
    T = 295.0
    value, led = free_energy(Geometry(10e-6, 1e-6), GOLD, T, accuracy=FAST)
    assert value < 0 and led.total == value
    for t in led.terms:
        assert t.xi == pytest.approx(matsubara_frequency(t.n, T), rel=1e-15)
        assert t.contribution < 0
    mags = [abs(t.contribution) for t in led.terms]
    assert all(b < a for a, b in zip(mags[2:], mags[3:]))  # eventually decreasing
    assert abs(led.tail) < FAST.n_tol * abs(value)
    assert led.zero_te == 0.0 and led.zero_tm < 0
    assert value == pytest.approx(led.zero_tm + led.zero_te + sum(t.contribution for t in led.terms) + led.tail, rel=1e-13)


def test_energy_magnitude_decreases_with_distance():
    R = 1e-6
    vals = [free_energy(Geometry(R, L), GOLD, 295.0, accuracy=FAST)[0] for L in np.linspace(2e-6, 10e-6, 5)]
    assert all(v < 0 for v in vals)
    assert all(abs(b) < abs(a) for a, b in zip(vals, vals[1:]))


def test_prescription_ordering():
    g = Geometry(10e-6, 1e-6)
    f_pr = free_energy(g, PR, 295.0, accuracy=FAST)[0]
    f_pl = free_energy(g, GOLD, 295.0, "plasma", FAST)[0]
    f_dr = free_energy(g, GOLD, 295.0, "drude", FAST)[0]
    assert f_pr <= f_pl <= f_dr < 0


def test_drude_plasma_difference_is_the_te_zero_frequency_term():
    g = Geometry(10e-6, 1e-6)
    T = 295.0
    f_pl, led_pl = free_energy(g, GOLD, T, "plasma", FAST)
    f_dr, led_dr = free_energy(g, GOLD, T, "drude", FAST)
    lmax = 40  # ceil(4 * 10)
    te = zero_freq_te_plasma(g, GOLD.omega_p, lmax, m_tol=FAST.m_tol)
    assert f_pl - f_dr == pytest.approx(0.5 * k_B * T * te, rel=1e-12)
    assert led_pl.zero_te == pytest.approx(0.5 * k_B * T * te, rel=1e-12)


def test_zero_frequency_terms():
    g = Geometry(10e-6, 1e-6)
    dr = zero_freq_term("drude", g, GOLD, 50)
    pl = zero_freq_term("plasma", g, GOLD, 50)
    pr = zero_freq_term("pr", g, PR, 50)
    assert dr.te == 0.0 and dr.tm == pl.tm == pr.tm < 0
    assert abs(pr.total) >= abs(pl.total) >= abs(dr.total)
    assert pl.total - dr.total == pytest.approx(pl.te, rel=1e-14)


def test_zero_freq_tm_scale_invariance_and_limits():
    a = zero_freq_tm(10.0, 60)
    assert a == pytest.approx(zero_freq_tm(10.0, 60), rel=0)
    g1, g2 = Geometry(10e-6, 1e-6), Geometry(20e-6, 2e-6)
    z1 = zero_freq_term("drude", g1, GOLD, 60).tm
    z2 = zero_freq_term("drude", g2, GOLD, 60).tm
    assert z1 == pytest.approx(z2, rel=1e-10)
    assert z1 == pytest.approx(a, rel=1e-12)
    assert abs(zero_freq_tm(1e-4, 20)) < 1e-11
    assert abs(zero_freq_tm(1e-3, 20)) < abs(zero_freq_tm(1e-2, 20)) < abs(zero_freq_tm(1e-1, 20))


def test_zero_freq_tm_matches_direct_determinants():
    # independent sum over m of dense log-determinants of the static blocks
    g = Geometry(10.0, 1.0)
    lmax = 70
    ref = 0.0
    for m in range(0, lmax + 1):
        A = static_kernel(g, m, lmax, "TM").materialize()
        v = np.linalg.slogdet(np.eye(A.shape[0]) - A)[1]
        ref += v if m == 0 else 2 * v
    assert zero_freq_tm(10.0, lmax, m_tol=1e-14) == pytest.approx(ref, rel=1e-10)


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
def test_zero_freq_te_plasma_limits():
    g = Geometry(10e-6, 1e-6)
    lmax = 50
    pr_te = zero_freq_term("pr", g, PR, lmax).te
    vals = [zero_freq_te_plasma(g, wp, lmax) for wp in (1 * EV, 9 * EV, 100 * EV, 1e4 * EV)]
    assert all(abs(a) < abs(b) for a, b in zip(vals, vals[1:]))
    assert abs(vals[-1]) < abs(pr_te)
    assert vals[-1] == pytest.approx(pr_te, rel=1e-3)
    assert abs(zero_freq_te_plasma(g, 1e8, lmax)) < 1e-10
    with pytest.raises(ValueError):
        zero_freq_te_plasma(g, 0.0, lmax)


@pytest.mark.parametrize("model,pres", [(PR, "pr"), (Plasma(9 * EV), "plasma")], ids=["pr", "plasma"])
def test_zero_frequency_is_the_small_xi_limit(model, pres):
    # Richardson extrapolation of Theta(xi) to xi -> 0 reproduces the closed-form n = 0 blocks
    g = Geometry(10e-6, 1e-6)
    lmax = 60
    z = zero_freq_term(pres, g, model, lmax).total
    v = [term(xi, g, model, lmax) for xi in (1e9, 2e9, 4e9)]
    extrap = (8 * v[0] - 6 * v[1] + v[2]) / 3
    assert extrap == pytest.approx(z, rel=1e-6)


def test_zero_temperature_integrand_is_negative():
    _, led = free_energy_T0(Geometry(5e-6, 1e-6), GOLD, FAST, return_ledger=True)
    assert led.temperature == 0.0
    # far nodes may underflow to exactly zero
    assert all(t.contribution <= 0 for t in led.terms)
    assert sum(t.contribution < 0 for t in led.terms) >= len(led.terms) - 2


@pytest.mark.slow
def test_zero_temperature_limit_of_matsubara_sum():
    g = Geometry(20e-6, 1e-6)
    acc = Accuracy(eta=3, n_tol=1e-6, m_tol=1e-7)
    a = free_energy_T0(g, PR, acc)
    b = free_energy(g, PR, 1.0, accuracy=acc)[0]
    assert b == pytest.approx(a, rel=1e-3)


def test_dipole_limit_of_perfect_reflectors():
    # R << L: E = -(9/(16 pi)) hbar c R^3 / L^4 (perfectly conducting small sphere)
    L = 1e-6
    for R in (0.01 * L, 0.005 * L):
        e = free_energy_T0(Geometry(R, L), PR, Accuracy(xi_tol=1e-7))
        cp = -9 * hbar * c * R**3 / (16 * math.pi * (L + R) ** 4)
        assert e == pytest.approx(cp, rel=2e-3)


def test_force_sign_and_stencil_consistency():
    g = Geometry(5e-6, 1e-6)
    acc = Accuracy(eta=5, xi_tol=None, xi_order=16)
    res = force_and_gradient(g, PR, None, accuracy=acc)
    assert res.free_energy < 0 and res.force < 0 and res.force_gradient > 0
    d = res.diagnostics
    assert d.stencil_force < 1e-6 and d.stencil_gradient < 1e-4
    assert d.energies == 7 and d.step == stencil_step(g.L, acc)


def test_force_matches_cubic_fit_of_seven_energies():
    g = Geometry(5e-6, 1e-6)
    acc = Accuracy(eta=5, xi_tol=None, xi_order=16, stencil_check=False)
    res = force_and_gradient(g, PR, None, accuracy=acc)
    h = res.diagnostics.step
    tally = _Tally()
    _, _, disc = _free_energy_T0(g, PR, acc, None, tally)
    ks = np.arange(-3, 4)
    e = np.array([_free_energy_T0(g.with_distance(g.L + k * h), PR, acc, disc, tally)[0] for k in ks])
    coef = np.polyfit(ks * h, e, 3)
    assert -coef[2] == pytest.approx(res.force, rel=1e-5)


def test_five_point_stencil_is_exact_on_quartics():
    h = 0.1
    p = np.polynomial.Polynomial([1.0, -2.0, 0.5, 0.3, -0.2])
    F, Fp = _five_point([p(k * h) for k in (-2, -1, 0, 1, 2)], h)
    assert F == pytest.approx(-p.deriv()(0.0), rel=1e-10)
    assert Fp == pytest.approx(-p.deriv(2)(0.0), rel=1e-10)


def test_gold_force_and_gradient_signs_at_room_temperature():
    res = force_and_gradient(Geometry(5e-6, 500e-9), GOLD, 295.0, accuracy=Accuracy(eta=4, n_tol=1e-8))
    assert res.force < 0 < res.force_gradient
    assert res.ledger.prescription is Prescription.DRUDE


def test_truncation_caps_raise():
    with pytest.raises(ConvergenceError):
        free_energy(Geometry(5e-6, 1e-6), PR, 295.0, accuracy=Accuracy(eta=3, n_min=2, n_cap=3, n_tol=1e-12))
