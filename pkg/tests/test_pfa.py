import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.constants import c, hbar, k as k_B
from scipy.special import zeta

from sphereplane.materials import EV, Plasma, PerfectReflector, default_gold
from sphereplane.pfa import (
    BetaEstimate,
    PlateAccuracy,
    extrapolate_beta,
    lifshitz_pp,
    lifshitz_pp_ideal,
    pfa_reference,
    violates_bound,
)
from sphereplane.scattering import Geometry

PR = PerfectReflector()
GOLD = default_gold()


@pytest.mark.parametrize("L", [100e-9, 1e-6, 10e-6])
def test_ideal_plates_at_zero_temperature(L):
    assert lifshitz_pp(L, None, PR) == pytest.approx(lifshitz_pp_ideal(L), rel=1e-10)


def test_ideal_plates_scale_as_inverse_cube():
    a, b = lifshitz_pp(1e-6, None, PR), lifshitz_pp(2e-6, None, PR)
    assert a / b == pytest.approx(8.0, rel=1e-12)


def test_ideal_plates_high_temperature_limit():
    # classical limit: -zeta(3) k T / (8 pi L^2)
    L, T = 20e-6, 295.0
    v = lifshitz_pp(L, T, PR)
    assert v == pytest.approx(-zeta(3) * k_B * T / (8 * math.pi * L**2), rel=1e-3)


def test_real_metal_plates_are_weaker_than_ideal():
    for L in (100e-9, 1e-6):
        ideal = lifshitz_pp(L, None, PR)
        pl = lifshitz_pp(L, None, Plasma(9 * EV))
        dr = lifshitz_pp(L, None, GOLD)
        assert ideal < pl < dr < 0
    # plasma -> ideal at large distance
    L = 50e-6
    assert lifshitz_pp(L, None, Plasma(9 * EV)) == pytest.approx(lifshitz_pp_ideal(L), rel=1e-2)


def test_prescription_ordering_at_room_temperature():
    L = 1e-6
    pr = lifshitz_pp(L, 295.0, PR)
    pl = lifshitz_pp(L, 295.0, GOLD, "plasma")
    dr = lifshitz_pp(L, 295.0, GOLD, "drude")
    assert pr < pl < dr < 0
    with pytest.raises(ValueError):
        lifshitz_pp(L, 295.0, PR, "drude")


def test_drude_plasma_plate_difference_at_large_distance():
    # at L >> plasma wavelength the n = 0 TE term approaches the ideal -zeta(3) kT / (16 pi L^2)
    L, T = 10e-6, 295.0
    diff = lifshitz_pp(L, T, GOLD, "plasma") - lifshitz_pp(L, T, GOLD, "drude")
    assert diff == pytest.approx(-zeta(3) * k_B * T / (16 * math.pi * L**2), rel=0.05)
    assert diff < 0


def test_pfa_reference_closed_form():
    g = Geometry(50e-6, 1e-6)
    ref = pfa_reference(g, None, PR)
    E = lifshitz_pp_ideal(g.L)
    assert ref.free_energy_per_area == pytest.approx(E, rel=1e-10)
    assert ref.force == pytest.approx(2 * math.pi * g.R * E, rel=1e-10)
    # dF/dL of 2 pi R E = 2 pi R * 3 pi^2 hbar c / (720 L^4)
    assert ref.force_gradient == pytest.approx(2 * math.pi * g.R * 3 * math.pi**2 * hbar * c / (720 * g.L**4), rel=1e-7)


def test_pfa_reference_is_linear_in_radius():
    a = pfa_reference(Geometry(10e-6, 200e-9), 295.0, GOLD)
    b = pfa_reference(Geometry(30e-6, 200e-9), 295.0, GOLD)
    assert b.force == pytest.approx(3 * a.force, rel=1e-14)
    assert b.force_gradient == pytest.approx(3 * a.force_gradient, rel=1e-14)
    assert a.force < 0 < a.force_gradient


def test_plate_accuracy_validation():
    with pytest.raises(ValueError):
        PlateAccuracy(order=0)
    with pytest.raises(ValueError):
        PlateAccuracy(tol=0.0)


@given(
    st.floats(-2, 2),
    st.floats(-20, 20),
    st.lists(st.floats(10, 1000), min_size=2, max_size=6, unique=True),
)
def test_extrapolation_is_exact_on_linear_data(a, b, aspects):
    est = [BetaEstimate(1.0, s, a + b / s, 2 * a - b / s) for s in aspects]
    if np.ptp([1 / s for s in aspects]) < 1e-6:
        return
    fit = extrapolate_beta(est)
    assert fit.intercept == pytest.approx(a, abs=1e-9)
    assert fit.slope == pytest.approx(b, abs=1e-6)
    assert fit.rms < 1e-9
    fit2 = extrapolate_beta(est, "beta_prime_like")
    assert fit2.intercept == pytest.approx(2 * a, abs=1e-9)


def test_extrapolation_errors():
    with pytest.raises(ValueError):
        extrapolate_beta([BetaEstimate(1.0, 50.0, -0.8, -0.5)])
    with pytest.raises(ValueError):
        extrapolate_beta([BetaEstimate(1.0, 50.0, -0.8, -0.5)] * 2, "gamma")


def test_bound_classification():
    assert violates_bound(-0.46)
    assert violates_bound(0.4)
    assert not violates_bound(-0.39)
    assert not violates_bound(-0.2, bound=0.3) and violates_bound(-0.31, bound=0.3)
