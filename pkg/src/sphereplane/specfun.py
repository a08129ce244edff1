r"""Log-scaled special functions on the imaginary frequency axis.

Everything here returns natural logarithms (or :class:`LogSigned`) because
modified Bessel functions and associated Legendre functions of order
:math:`\ell \sim 10^4` leave the double precision range long before the
physically relevant products do.

Conventions
-----------
* ``I_nu``, ``K_nu`` are the modified Bessel functions of half-integer order
  ``nu = l + 1/2``.
* :math:`P_\ell^m(x)` for :math:`x \ge 1` carries no Condon-Shortley phase,
  :math:`P_\ell^m(x) = (x^2-1)^{m/2} d^m P_\ell(x)/dx^m`, so it is positive
  for :math:`x > 1`.
* Mie coefficients are returned as magnitudes. The electric coefficient
  :math:`a_\ell` is physically positive on the imaginary axis, the magnetic
  :math:`b_\ell` negative; the round-trip assembly only ever needs
  :math:`\sqrt{|a_\ell|}` and :math:`\sqrt{|b_\ell|}` (see scattering).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit
from scipy.special import gammaln, ive

from .materials import MaterialModel, PerfectReflector, epsilon

__all__ = [
    "LogSigned",
    "ln_bessel_i",
    "ln_bessel_k",
    "bessel_i_sequence",
    "bessel_k_sequence",
    "ln_assoc_legendre",
    "legendre_table",
    "mie_coefficients",
    "mie_sequence",
    "mie_static_te_plasma",
]

_LN_TINY = -650.0  # below this, scipy's scaled Bessel values are subnormal


@dataclass(frozen=True)
class LogSigned:
    """A real number stored as ``sign * exp(ln)``."""

    ln: float
    sign: int = 1

    def __post_init__(self):
        if self.sign not in (-1, 0, 1):
            raise ValueError(f"sign must be -1, 0 or 1, got {self.sign}")

    @classmethod
    def from_value(cls, value: float) -> "LogSigned":
        if value == 0:
            return cls(-math.inf, 0)
        return cls(math.log(abs(value)), 1 if value > 0 else -1)

    def __mul__(self, other: "LogSigned") -> "LogSigned":
        sign = self.sign * other.sign
        return LogSigned(self.ln + other.ln if sign else -math.inf, sign)

    def __truediv__(self, other: "LogSigned") -> "LogSigned":
        if other.sign == 0:
            raise ZeroDivisionError("division by LogSigned zero")
        sign = self.sign * other.sign
        return LogSigned(self.ln - other.ln if sign else -math.inf, sign)

    def __float__(self) -> float:
        return self.value

    @property
    def value(self) -> float:
        """The represented number; may overflow to ``inf`` or underflow to 0."""
        if self.sign == 0:
            return 0.0
        return self.sign * math.exp(self.ln)


def _check_half_integer(nu: float) -> int:
    l = nu - 0.5
    if l < 0 or abs(l - round(l)) > 1e-12:
        raise ValueError(f"order must be a non-negative half-integer, got {nu}")
    return int(round(l))


def _ln_i_half(x: float) -> float:
    # ln I_{1/2}(x) = ln(sqrt(2/(pi x)) sinh x)
    if x < 1e-4:
        ln_sinh = math.log(x) + math.log1p(x * x / 6.0 + x**4 / 120.0)
    else:
        ln_sinh = x + math.log1p(-math.exp(-2.0 * x)) - math.log(2.0)
    return 0.5 * math.log(2.0 / (math.pi * x)) + ln_sinh


def _i_ratio_start(nu: float, x: float) -> float:
    """Accurate I_nu(x)/I_{nu-1}(x) at a single (large) order."""
    a, b = ive(nu, x), ive(nu - 1.0, x)
    if np.isfinite(a) and np.isfinite(b) and a > 1e-280 and b > 1e-280:
        return a / b
    # nu >> x here; the downward recurrence forgets this start within a few steps
    return x / (nu - 0.5 + math.sqrt((nu + 0.5) ** 2 + x * x))


def bessel_i_sequence(x: float, lmax: int) -> tuple[np.ndarray, np.ndarray]:
    r"""Log-values and ratios of :math:`I_{\ell+1/2}(x)` for ``l = 0..lmax+1``.

    Returns
    -------
    ln_i : ndarray, shape (lmax + 2,)
        ``ln_i[l] = ln I_{l+1/2}(x)``.
    ratio : ndarray, shape (lmax + 2,)
        ``ratio[l] = I_{l+1/2}(x) / I_{l-1/2}(x)`` (``ratio[0]`` is unused and
        set to ``nan``).

    The ratios come from the downward (Miller) recurrence
    ``rho_nu = 1 / (2 nu / x + rho_{nu+1})``, which is stable because
    :math:`I_\nu` is the minimal solution; the logs are accumulated upward from
    the closed form for :math:`I_{1/2}`.
    """
    if not x > 0:
        raise ValueError(f"argument must be positive, got {x}")
    top = lmax + 1
    extra = 16 + int(math.sqrt(top))
    ratio = np.empty(top + 1)
    rho = _i_ratio_start(top + extra + 0.5, x)
    for l in range(top + extra - 1, 0, -1):
        rho = 1.0 / (2.0 * (l + 0.5) / x + rho)
        if l <= top:
            ratio[l] = rho
    ratio[0] = np.nan
    ln_i = np.empty(top + 1)
    ln_i[0] = _ln_i_half(x)
    ln_i[1:] = ln_i[0] + np.cumsum(np.log(ratio[1:]))
    return ln_i, ratio


def bessel_k_sequence(x: float, lmax: int) -> tuple[np.ndarray, np.ndarray]:
    r"""Log-values and ratios of :math:`K_{\ell+1/2}(x)` for ``l = 0..lmax+1``.

    ``ratio[l] = K_{l+1/2}(x) / K_{l-1/2}(x)`` (``ratio[0]`` is ``nan``). The
    upward recurrence ``K_{nu+1}/K_nu = 2 nu / x + K_{nu-1}/K_nu`` only adds
    positive numbers, so it is stable to full precision.
    """
    if not x > 0:
        raise ValueError(f"argument must be positive, got {x}")
    top = lmax + 1
    ratio = np.empty(top + 1)
    ratio[0] = np.nan
    r = 1.0 + 1.0 / x  # K_{3/2}/K_{1/2}
    if top >= 1:
        ratio[1] = r
    for l in range(2, top + 1):
        r = 2.0 * (l - 0.5) / x + 1.0 / r
        ratio[l] = r
    ln_k = np.empty(top + 1)
    ln_k[0] = 0.5 * math.log(math.pi / (2.0 * x)) - x
    ln_k[1:] = ln_k[0] + np.cumsum(np.log(ratio[1:]))
    return ln_k, ratio


def ln_bessel_i(nu: float, x: float) -> LogSigned:
    r""":math:`\ln I_\nu(x)` for half-integer ``nu`` and ``x > 0``."""
    l = _check_half_integer(nu)
    if not x > 0:
        raise ValueError(f"argument must be positive, got {x}")
    v = ive(nu, x)
    if np.isfinite(v) and v > 1e-280:
        return LogSigned(math.log(v) + x, 1)
    ln_i, _ = bessel_i_sequence(x, max(l - 1, 0))
    return LogSigned(float(ln_i[l]), 1)


def ln_bessel_k(nu: float, x: float) -> LogSigned:
    r""":math:`\ln K_\nu(x)` for half-integer ``nu`` and ``x > 0``."""
    l = _check_half_integer(nu)
    if not x > 0:
        raise ValueError(f"argument must be positive, got {x}")
    ln_k, _ = bessel_k_sequence(x, max(l - 1, 0))
    return LogSigned(float(ln_k[l]), 1)


def _ln_pmm(m: int, x2m1_ln: np.ndarray) -> np.ndarray:
    # ln[(2m-1)!! (x^2-1)^{m/2}]
    return gammaln(2 * m + 1) - m * math.log(2.0) - gammaln(m + 1) + 0.5 * m * x2m1_ln


def legendre_table(m: int, lmax: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    r"""Log-tables of :math:`P_\ell^m(x)` and :math:`\sqrt{x^2-1}\,P_\ell^{m\prime}(x)`.

    Parameters
    ----------
    m : int
        Order, ``m >= 0``.
    lmax : int
        Largest degree, ``lmax >= m``.
    x : ndarray
        Arguments, all ``> 1``.

    Returns
    -------
    ln_p, ln_dp : ndarray, shape (lmax - m + 1, len(x))
        Row ``l - m`` holds :math:`\ln P_\ell^m(x)` and
        :math:`\ln[\sqrt{x^2-1}\,dP_\ell^m/dx]` respectively. Both functions
        are positive for ``x > 1`` except the derivative at ``l = m = 0``,
        which is zero (log ``-inf``).

    Notes
    -----
    Upward recurrence in the degree for both the function and its derivative,
    carried with a per-node running log-scale that is renormalised whenever
    the scaled values exceed ``1e200``.
    """
    x = np.asarray(x, dtype=float)
    if lmax < m or m < 0:
        raise ValueError(f"need 0 <= m <= lmax, got m={m}, lmax={lmax}")
    s2 = (x - 1.0) * (x + 1.0)
    if np.any(s2 <= 0):
        raise ValueError("legendre_table requires x > 1")
    ln_s2 = np.log(s2)
    ln_s = 0.5 * ln_s2
    nrow = lmax - m + 1
    ln_p = np.empty((nrow, x.size))
    ln_dp = np.empty((nrow, x.size))

    scale = _ln_pmm(m, ln_s2)  # P_m^m = exp(scale) * 1
    # the recurrence runs on scaled values; logs are taken afterwards in bulk
    sc = np.empty((nrow, x.size))
    _legendre_fill(m, x, s2, scale, ln_p, ln_dp, sc)
    with np.errstate(divide="ignore"):
        np.log(ln_p, out=ln_p)
        np.log(ln_dp, out=ln_dp)
    ln_p += sc
    ln_dp += sc
    ln_dp += ln_s
    return ln_p, ln_dp


@njit(cache=True, nogil=True)
def _legendre_fill(m, x, s2, scale0, p, dp, sc):  # pragma: no cover - compiled
    # p, dp receive scaled P_l^m and dP_l^m/dx, sc the log of the common scale
    nrow, nx = p.shape
    scale = scale0.copy()
    p0 = np.ones(nx)
    d0 = m * x / s2  # P_m^m' / P_m^m
    p1 = x * (2 * m + 1)
    d1 = (2 * m + 1) * (1.0 + x * d0)
    for i in range(nx):
        p[0, i] = 1.0
        dp[0, i] = d0[i]
        sc[0, i] = scale[i]
    if nrow == 1:
        return
    for i in range(nx):
        p[1, i] = p1[i]
        dp[1, i] = d1[i]
        sc[1, i] = scale[i]
    for row in range(2, nrow):
        l = m + row  # degree l from l-1, l-2
        a = (2.0 * l - 1) / (l - m)
        b = (l + m - 1.0) / (l - m)
        for i in range(nx):
            p2 = a * x[i] * p1[i] - b * p0[i]
            d2 = a * (p1[i] + x[i] * d1[i]) - b * d0[i]
            p0[i] = p1[i]
            d0[i] = d1[i]
            p1[i] = p2
            d1[i] = d2
            if p2 > 1e200 or d2 > 1e200:
                big = max(p2, d2)
                p0[i] /= big
                p1[i] /= big
                d0[i] /= big
                d1[i] /= big
                scale[i] += math.log(big)
            p[row, i] = p1[i]
            dp[row, i] = d1[i]
            sc[row, i] = scale[i]


def ln_assoc_legendre(l: int, m: int, x: float) -> LogSigned:
    r""":math:`\ln P_\ell^m(x)` for ``x >= 1`` (no Condon-Shortley phase)."""
    if m < 0 or m > l:
        raise ValueError(f"need 0 <= m <= l, got l={l}, m={m}")
    if x < 1:
        raise ValueError(f"argument must be >= 1, got {x}")
    if x == 1.0:
        return LogSigned(0.0, 1) if m == 0 else LogSigned(-math.inf, 0)
    ln_p, _ = legendre_table(m, l, np.array([float(x)]))
    return LogSigned(float(ln_p[-1, 0]), 1)


def _ln_q(ln_ratio_i: np.ndarray, z: float, ls: np.ndarray) -> np.ndarray:
    """ln of q(z) = z S'(z)/S(z) = z I_{l-1/2}/I_{l+1/2} - l  (> 0 for l >= 1)."""
    return np.log(z / ln_ratio_i - ls)


def mie_sequence(lmax: int, xi: float, R: float, model: MaterialModel) -> tuple[np.ndarray, np.ndarray]:
    r"""Log-magnitudes of the Mie coefficients for ``l = 1..lmax``.

    Parameters
    ----------
    lmax : int
        Largest multipole order.
    xi : float
        Imaginary frequency in rad/s, ``> 0``.
    R : float
        Sphere radius in m.
    model : MaterialModel
        Sphere material.

    Returns
    -------
    ln_a, ln_b : ndarray, shape (lmax,)
        ``ln |a_l|`` and ``ln |b_l|`` for ``l = 1..lmax``.
    """
    from scipy.constants import c

    if not xi > 0 or not R > 0:
        raise ValueError("mie_sequence needs xi > 0 and R > 0")
    chi = xi * R / c
    ls = np.arange(1, lmax + 1, dtype=float)
    ln_i, rat_i = bessel_i_sequence(chi, lmax)
    ln_k, rat_k = bessel_k_sequence(chi, lmax)
    base = math.log(math.pi / 2.0) + ln_i[1 : lmax + 1] - ln_k[1 : lmax + 1]
    # q(chi) and -e(chi), e(z) = z E'(z)/E(z) = -(z K_{l-1/2}/K_{l+1/2} + l)
    q_chi = chi / rat_i[1 : lmax + 1] - ls
    me_chi = chi / rat_k[1 : lmax + 1] + ls
    if isinstance(model, PerfectReflector):
        ln_a = base + np.log(q_chi) - np.log(me_chi)
        ln_b = base.copy()
        return ln_a, ln_b
    eps = epsilon(model, xi)
    n = math.sqrt(eps)
    _, rat_in = bessel_i_sequence(n * chi, lmax)
    q_in = n * chi / rat_in[1 : lmax + 1] - ls
    # b: (q_in - q_chi)/(q_in + me_chi); a: (n^2 q_chi - q_in)/(q_in + n^2 me_chi)
    ln_b = base + np.log(q_in - q_chi) - np.log(q_in + me_chi)
    ln_a = base + np.log(eps * q_chi - q_in) - np.log(q_in + eps * me_chi)
    return ln_a, ln_b


def mie_coefficients(l: int, xi: float, R: float, model: MaterialModel) -> tuple[LogSigned, LogSigned]:
    """Mie coefficients ``(a_l, b_l)`` at imaginary frequency ``xi``.

    Sign convention: ``a_l > 0`` (electric, TM) and ``b_l < 0`` (magnetic,
    TE), mirroring the plane's ``r_TM >= 0 >= r_TE``.
    """
    if l < 1:
        raise ValueError(f"multipole order must be >= 1, got {l}")
    ln_a, ln_b = mie_sequence(l, xi, R, model)
    return LogSigned(float(ln_a[-1]), 1), LogSigned(float(ln_b[-1]), -1)


@lru_cache(maxsize=64)
def _static_ln_mie_pr(lmax: int) -> tuple[np.ndarray, np.ndarray]:
    # |a_l| ~ A_l chi^{2l+1}, |b_l| ~ A_l l/(l+1) chi^{2l+1} as chi -> 0
    ls = np.arange(1, lmax + 1, dtype=float)
    ln_a = (
        math.log(math.pi / 2.0)
        - (2 * ls + 1) * math.log(2.0)
        + np.log(2 * (ls + 1) / ls)
        - gammaln(ls + 0.5)
        - gammaln(ls + 1.5)
    )
    ln_b = ln_a + np.log(ls / (ls + 1))
    return ln_a, ln_b


def static_mie_pr(lmax: int) -> tuple[np.ndarray, np.ndarray]:
    r"""Leading small-argument coefficients of the perfect-reflector Mie terms.

    Returns ``ln A_l`` and ``ln B_l`` with :math:`|a_\ell| \to A_\ell \chi^{2\ell+1}`,
    :math:`|b_\ell| \to B_\ell \chi^{2\ell+1}` as :math:`\chi = \xi R/c \to 0`.
    """
    ln_a, ln_b = _static_ln_mie_pr(lmax)
    return ln_a.copy(), ln_b.copy()


def mie_static_te_plasma(lmax: int, omega_r: float) -> np.ndarray:
    r"""``ln B_l`` for a plasma sphere in the :math:`\xi \to 0` limit.

    :math:`|b_\ell| \to B^{PR}_\ell\,\chi^{2\ell+1}\,I_{\ell+3/2}(\Omega)/I_{\ell-1/2}(\Omega)`
    with :math:`\Omega = \omega_P R/c`.
    """
    _, ln_b = _static_ln_mie_pr(lmax)
    _, rat = bessel_i_sequence(omega_r, lmax + 1)
    ls = np.arange(1, lmax + 1)
    # I_{l+3/2}/I_{l-1/2} = ratio[l+1] * ratio[l]
    return ln_b + np.log(rat[ls + 1]) + np.log(rat[ls])
