import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.constants import c

from sphereplane.materials import EV, Drude, PerfectReflector, Plasma
from sphereplane.specfun import (
    LogSigned,
    bessel_i_sequence,
    bessel_k_sequence,
    legendre_table,
    ln_assoc_legendre,
    ln_bessel_i,
    ln_bessel_k,
    mie_coefficients,
    mie_sequence,
    mie_static_te_plasma,
    static_mie_pr,
)

mp.mp.dps = 40


def _mp_ln(v):
    return float(mp.log(v))


@pytest.mark.parametrize("l", [0, 1, 7, 120, 1500, 6000])
@pytest.mark.parametrize("x", [1e-3, 0.7, 40.0, 2500.0])
def test_bessel_logs_against_mpmath(l, x):
    nu = l + 0.5
    ref_i = _mp_ln(mp.besseli(nu, x))
    ref_k = _mp_ln(mp.besselk(nu, x, maxprec=60000, maxterms=10**6))
    tol = 1e-13 * max(1.0, abs(ref_i)) + 1e-13 * l
    assert ln_bessel_i(nu, x).ln == pytest.approx(ref_i, abs=tol)
    assert ln_bessel_k(nu, x).ln == pytest.approx(ref_k, abs=1e-13 * max(1.0, abs(ref_k)) + 1e-13 * l)


@pytest.mark.parametrize("x", [0.01, 3.0, 300.0])
def test_bessel_sequences_against_mpmath(x):
    lmax = 400
    ln_i, rat_i = bessel_i_sequence(x, lmax)
    ln_k, rat_k = bessel_k_sequence(x, lmax)
    assert ln_i.shape == (lmax + 2,)
    for l in (0, 1, 33, 200, lmax + 1):
        assert ln_i[l] == pytest.approx(_mp_ln(mp.besseli(l + 0.5, x)), abs=1e-12 * max(1, abs(ln_i[l])))
        assert ln_k[l] == pytest.approx(_mp_ln(mp.besselk(l + 0.5, x)), abs=1e-12 * max(1, abs(ln_k[l])))
    assert np.isnan(rat_i[0]) and np.isnan(rat_k[0])
    assert np.all(rat_i[1:] < 1) and np.all(rat_k[1:] > 1)


def test_bessel_argument_validation():
    with pytest.raises(ValueError):
        ln_bessel_i(1.0, 1.0)  # not a half-integer
    with pytest.raises(ValueError):
        ln_bessel_k(0.5, 0.0)
    with pytest.raises(ValueError):
        bessel_i_sequence(-1.0, 3)


def _mp_legendre(l, m, x):
    # no Condon-Shortley phase: P_l^m(x) = (x^2-1)^{m/2} d^m P_l / dx^m
    x = mp.mpf(x)
    return (x * x - 1) ** (mp.mpf(m) / 2) * mp.diff(lambda t: mp.legendre(l, t), x, m)


@pytest.mark.parametrize("m", [0, 1, 5])
@pytest.mark.parametrize("x", [1.0 + 1e-6, 1.3, 40.0])
def test_legendre_table_against_mpmath(m, x):
    lmax = 30
    ln_p, ln_dp = legendre_table(m, lmax, np.array([x]))
    for l in range(m, lmax + 1):
        ref = _mp_legendre(l, m, x)
        assert ln_p[l - m, 0] == pytest.approx(_mp_ln(ref), abs=1e-12 * max(1, abs(ln_p[l - m, 0])))
        if l == 0:
            assert ln_dp[0, 0] == -np.inf
            continue
        xm = mp.mpf(x)
        d = mp.sqrt(xm * xm - 1) * mp.diff(lambda t: _mp_legendre(l, m, t), xm)
        assert ln_dp[l - m, 0] == pytest.approx(_mp_ln(d), abs=1e-11 * max(1, abs(ln_dp[l - m, 0])))


@pytest.mark.parametrize("l,m", [(800, 0), (2000, 3), (5000, 40), (300, 300)])
@pytest.mark.parametrize("x", [1.0 + 1e-8, 1.02, 7.0, 1e4])
def test_high_degree_legendre_against_hypergeometric(l, m, x):
    # closed form, independent of any recurrence, evaluated at 40 digits
    if l == m:
        # P_m^m = (2m-1)!! (x^2-1)^{m/2}
        xm = mp.mpf(x)
        ref = mp.fac2(2 * m - 1) * (xm * xm - 1) ** (mp.mpf(m) / 2)
    else:
        ref = mp.legenp(l, m, mp.mpf(x), type=3, maxprec=60000, maxterms=10**6)
    ln_ref = float(mp.log(abs(ref)))
    got = ln_assoc_legendre(l, m, x).ln
    assert got == pytest.approx(ln_ref, abs=1e-13 * max(1.0, abs(ln_ref)) + 1e-13 * l)


def test_legendre_validation():
    with pytest.raises(ValueError):
        legendre_table(3, 2, np.array([2.0]))
    with pytest.raises(ValueError):
        legendre_table(0, 2, np.array([1.0]))
    assert ln_assoc_legendre(4, 0, 1.0).ln == 0.0
    with pytest.raises(ValueError):
        ln_assoc_legendre(2, 1, 0.5)


def _mp_mie(l, chi, eps):
    """Mie magnitudes at imaginary frequency at 40 digits (eps=None: perfect reflector)."""
    chi = mp.mpf(chi)
    I = lambda nu, z: mp.besseli(nu, z)
    K = lambda nu, z: mp.besselk(nu, z)
    base = mp.pi / 2 * I(l + 0.5, chi) / K(l + 0.5, chi)
    q = chi * I(l - 0.5, chi) / I(l + 0.5, chi) - l
    e = chi * K(l - 0.5, chi) / K(l + 0.5, chi) + l
    if eps is None:
        return base * q / e, base
    n = mp.sqrt(mp.mpf(eps))
    qi = n * chi * I(l - 0.5, n * chi) / I(l + 0.5, n * chi) - l
    return base * (eps * q - qi) / (qi + eps * e), base * (qi - q) / (qi + e)


@pytest.mark.parametrize("model", [PerfectReflector(), Drude(9 * EV, 0.035 * EV), Plasma(9 * EV)], ids=["pr", "drude", "plasma"])
@pytest.mark.parametrize("xi,R", [(1e12, 1e-6), (1e15, 1e-5), (3e16, 5e-5)])
def test_mie_against_mpmath(model, xi, R):
    lmax = 300
    ln_a, ln_b = mie_sequence(lmax, xi, R, model)
    eps = None if isinstance(model, PerfectReflector) else float(1 + model.omega_p**2 / (xi * (xi + getattr(model, "gamma", 0.0))))
    chi = xi * R / c
    for l in (1, 2, 17, 150, lmax):
        a, b = _mp_mie(l, chi, eps)
        assert ln_a[l - 1] == pytest.approx(_mp_ln(a), abs=1e-10 * max(1, abs(ln_a[l - 1])))
        assert ln_b[l - 1] == pytest.approx(_mp_ln(abs(b)), abs=1e-10 * max(1, abs(ln_b[l - 1])))


def test_mie_sign_convention():
    a, b = mie_coefficients(3, 1e15, 1e-6, Drude(9 * EV, 0.035 * EV))
    assert a.sign == 1 and b.sign == -1
    assert float(a) > 0 > float(b)


def test_large_plasma_frequency_tends_to_perfect_reflector():
    xi, R = 1e14, 1e-6
    pr = mie_sequence(20, xi, R, PerfectReflector())
    pl = mie_sequence(20, xi, R, Plasma(1e22))
    assert np.allclose(pl[0], pr[0], atol=1e-5)
    assert np.allclose(pl[1], pr[1], atol=1e-5)


def test_static_perfect_reflector_limit():
    # |a_l| -> A_l chi^{2l+1} as chi -> 0
    lmax, R = 12, 1e-6
    ln_A, ln_B = static_mie_pr(lmax)
    ls = np.arange(1, lmax + 1)
    for xi in (1e8, 1e9):
        chi = xi * R / c
        ln_a, ln_b = mie_sequence(lmax, xi, R, PerfectReflector())
        assert np.allclose(ln_a - (2 * ls + 1) * math.log(chi), ln_A, atol=1e-4)
        assert np.allclose(ln_b - (2 * ls + 1) * math.log(chi), ln_B, atol=1e-4)
    # dipole: a_1 = (2/3) chi^3, b_1 = (1/3) chi^3
    assert math.exp(ln_A[0]) == pytest.approx(2 / 3)
    assert math.exp(ln_B[0]) == pytest.approx(1 / 3)


def test_static_plasma_te_limit():
    lmax, R, wp = 10, 1e-6, 9 * EV
    ls = np.arange(1, lmax + 1)
    ln_B = mie_static_te_plasma(lmax, wp * R / c)
    xi = 1e6
    chi = xi * R / c
    _, ln_b = mie_sequence(lmax, xi, R, Plasma(wp))
    assert np.allclose(ln_b - (2 * ls + 1) * math.log(chi), ln_B, atol=1e-8)
    # omega_p -> infinity recovers the perfect reflector
    assert np.allclose(mie_static_te_plasma(lmax, 1e9), static_mie_pr(lmax)[1], atol=1e-7)


@given(v=st.floats(-700, 700), w=st.floats(-700, 700))
def test_log_signed_arithmetic(v, w):
    a, b = LogSigned(v, 1), LogSigned(w, -1)
    assert (a * b).sign == -1 and (a * b).ln == pytest.approx(v + w)
    assert (a / b).ln == pytest.approx(v - w)
    assert float(LogSigned.from_value(-2.5)) == pytest.approx(-2.5)
