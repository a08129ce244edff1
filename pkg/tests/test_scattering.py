import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate
from scipy.constants import c
from numpy.polynomial.legendre import Legendre
from scipy.special import factorial, ive, kve

from sphereplane.materials import EV, PerfectReflector, Plasma, default_gold, epsilon, fresnel_dimensionless
from sphereplane.quadrature import QuadratureRule
from sphereplane.scattering import (
    BlockSpec,
    Geometry,
    assemble_block,
    block_as_kernel,
    choose_ell_max,
    refine_order,
    static_kernel,
)

GOLD = default_gold()


def _mie_plain(l, chi, model):
    """Perfect-reflector |a_l|, |b_l| from scipy's Bessel functions (moderate l only)."""
    I = lambda nu, z: ive(nu, z) * math.exp(z)
    K = lambda nu, z: kve(nu, z) * math.exp(-z)
    base = math.pi / 2 * I(l + 0.5, chi) / K(l + 0.5, chi)
    q = chi * I(l - 0.5, chi) / I(l + 0.5, chi) - l
    e = chi * K(l - 0.5, chi) / K(l + 0.5, chi) + l
    return base * q / e, base


def _brute_element(m, xi, geom, model, l1, p1, l2, p2):
    """Round-trip element by adaptive quadrature of the plane-wave integral."""
    tau = 2 * xi * geom.center_distance / c
    chi = xi * geom.R / c
    if isinstance(model, PerfectReflector):
        eps = None
        mie = {l: _mie_plain(l, chi, model) for l in (l1, l2)}
    else:
        from sphereplane.specfun import mie_sequence

        eps = epsilon(model, xi)
        la, lb = mie_sequence(max(l1, l2), xi, geom.R, model)
        mie = {l: (math.exp(la[l - 1]), math.exp(lb[l - 1])) for l in (l1, l2)}

    def norm(l):
        return math.sqrt((2 * l + 1) / 2 * factorial(l - m, exact=True) / factorial(l + m, exact=True) / (l * (l + 1)))

    # P_l^m = (x^2-1)^{m/2} d^m P_l/dx^m, no Condon-Shortley phase
    polys = {l: (Legendre.basis(l).deriv(m).convert(kind=np.polynomial.Polynomial),
                 Legendre.basis(l).deriv(m + 1).convert(kind=np.polynomial.Polynomial)) for l in (l1, l2)}

    def g(l, x):
        s = math.sqrt(x * x - 1)
        d0, d1 = polys[l][0](x), polys[l][1](x)
        P = s**m * d0
        dP = m * x * s ** (m - 2) * d0 + s**m * d1
        return m * P / s, s * dP  # (g_A, g_B)

    def coef(l, p):
        a, b = mie[l]
        return norm(l) * math.sqrt(a if p == 0 else b)

    def f(x):
        r_tm, r_te = fresnel_dimensionless(x, eps)
        ga1, gb1 = g(l1, x)
        ga2, gb2 = g(l2, x)
        # TM channel: electric via g_B, magnetic via g_A; TE swaps them
        tm = (gb1 if p1 == 0 else ga1) * (gb2 if p2 == 0 else ga2)
        te = (ga1 if p1 == 0 else gb1) * (ga2 if p2 == 0 else gb2)
        return 2 * math.exp(-tau * x) * (abs(float(r_tm)) * tm + abs(float(r_te)) * te)

    # beyond x = 1 + 600/tau the exponential has killed every term
    top = 1.0 + 600.0 / tau
    pts = [1.0 + k / tau for k in (1, 5, 20, 60) if 1.0 + k / tau < top]
    edges = [1.0] + pts + [top]
    val = sum(integrate.quad(f, a, b, epsabs=0, epsrel=1e-13, limit=400)[0] for a, b in zip(edges[:-1], edges[1:]))
    return coef(l1, p1) * coef(l2, p2) * val


@pytest.mark.parametrize("model", [PerfectReflector(), GOLD, Plasma(9 * EV)], ids=["pr", "drude", "plasma"])
@pytest.mark.parametrize("m", [0, 1, 3])
@pytest.mark.parametrize("u", [0.3, 2.0])
def test_block_matches_brute_force_quadrature(model, m, u):
    geom = Geometry(2e-6, 1e-6)
    xi = c * u / (2 * geom.L)
    lmax = 6
    blk = assemble_block(m, xi, geom, model, lmax)
    lmin = max(1, m)
    for l1 in range(lmin, lmax + 1):
        for l2 in range(l1, lmax + 1):
            for p1 in (0, 1):
                for p2 in (0, 1):
                    if m == 0 and p1 != p2:
                        continue  # E and M decouple at m = 0
                    ref = _brute_element(m, xi, geom, model, l1, p1, l2, p2)
                    got = blk.entries[2 * (l1 - lmin) + p1, 2 * (l2 - lmin) + p2]
                    assert got == pytest.approx(ref, rel=1e-9, abs=1e-14 * blk.entries.max())


def test_block_is_symmetric_and_physical():
    geom = Geometry(20e-6, 1e-6)
    for m in (0, 4, 30):
        blk = assemble_block(m, 1e14, geom, GOLD, 100)
        assert np.array_equal(blk.entries, blk.entries.T)
        w = np.linalg.eigvalsh(blk.entries)
        assert w.min() > -1e-12 and w.max() < 1.0
        sign, ld = np.linalg.slogdet(np.eye(blk.dim) - blk.entries)
        assert sign == 1 and ld <= 0


def test_m_zero_decouples_polarisations():
    blk = assemble_block(0, 1e14, Geometry(5e-6, 1e-6), GOLD, 20)
    assert np.all(blk.entries[0::2, 1::2] == 0)


@given(s=st.floats(0.05, 20.0), m=st.integers(0, 6), u=st.floats(0.05, 10.0))
def test_perfect_reflector_scale_invariance(s, m, u):
    g = Geometry(5e-6, 1e-6)
    xi = c * u / (2 * g.L)
    lmax = 25
    spec = BlockSpec(m, xi, g, PerfectReflector(), lmax, 80)
    scaled = BlockSpec(m, xi / s, g.scaled(s), PerfectReflector(), lmax, 80)
    a = block_as_kernel(spec).materialize()
    b = block_as_kernel(scaled).materialize()
    assert np.max(np.abs(a - b)) <= 1e-10 * np.max(np.abs(a))


def test_refine_order_converges_and_reuses_m0_order():
    g = Geometry(50e-6, 1e-6)
    lmax = choose_ell_max(g)
    xi = c * 0.5 / (2 * g.L)
    base = BlockSpec(0, xi, g, GOLD, lmax, QuadratureRule.for_lmax(lmax).order)
    o0 = refine_order(base).order
    for m in (1, 10, 40):
        om = refine_order(BlockSpec(m, xi, g, GOLD, lmax, QuadratureRule.for_lmax(lmax).order)).order
        assert om <= o0


def test_choose_ell_max():
    assert choose_ell_max(Geometry(100e-6, 1e-6), 5.0) == 500
    assert choose_ell_max(Geometry(1e-6, 1e-6), 5.0) == 20
    with pytest.raises(ValueError):
        choose_ell_max(Geometry(1e-6, 1e-6), 0.0)


def test_argument_validation():
    g = Geometry(1e-6, 1e-6)
    with pytest.raises(ValueError):
        Geometry(-1.0, 1e-6)
    with pytest.raises(ValueError):
        BlockSpec(-1, 1e14, g, GOLD, 10, 50)
    with pytest.raises(ValueError):
        BlockSpec(0, 0.0, g, GOLD, 10, 50)
    with pytest.raises(ValueError):
        BlockSpec(12, 1e14, g, GOLD, 10, 50)
    with pytest.raises(ValueError):
        static_kernel(g, 0, 10, "XX")


def test_kernel_counts_entries_and_slices():
    spec = BlockSpec(2, 1e14, Geometry(5e-6, 1e-6), GOLD, 30, 60)
    k = block_as_kernel(spec)
    full = k.materialize()
    k2 = block_as_kernel(spec)
    rows = np.array([0, 5, 7])
    cols = np.array([1, 2])
    assert np.allclose(k2.block(rows, cols), full[np.ix_(rows, cols)], rtol=1e-13, atol=0)
    assert np.allclose(k2.diagonal(), np.diag(full), rtol=1e-13, atol=0)
    assert k2(3, 4) == pytest.approx(full[3, 4], rel=1e-13)


@pytest.mark.parametrize("pol", ["TM", "TE"])
def test_static_perfect_reflector_blocks_are_small_xi_limits(pol):
    # at xi -> 0 the finite-frequency PR block decouples into the static TM and TE blocks
    g = Geometry(3e-6, 1e-6)
    lmax, m = 12, 1
    st_ = static_kernel(g, m, lmax, pol).materialize()
    xi = 1e6
    fin = assemble_block(m, xi, g, PerfectReflector(), lmax, QuadratureRule(400), refine=False).entries
    # rescale: the static block is the chi -> 0 limit
    sub = fin[0::2, 0::2] if pol == "TM" else fin[1::2, 1::2]
    assert np.allclose(sub, st_, rtol=1e-5, atol=1e-12 * st_.max())


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
def test_static_plasma_te_tends_to_perfect_reflector():
    g = Geometry(3e-6, 1e-6)
    pr = static_kernel(g, 2, 15, "TE").materialize()
    big = static_kernel(g, 2, 15, "TE", omega_p=1e22).materialize()
    small = static_kernel(g, 2, 15, "TE", omega_p=1e10).materialize()
    assert np.allclose(big, pr, rtol=1e-6)
    assert np.all(np.abs(small) < np.abs(pr))
