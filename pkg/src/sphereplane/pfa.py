r"""Parallel-plate Lifshitz energy, PFA references and beyond-PFA coefficients.

The plate free energy per area is

.. math::

    \frac{\mathcal{F}_{PP}}{A} = \frac{k_B T}{2\pi}\Big[\tfrac12 I(0) + \sum_{n\ge1} I(\xi_n)\Big],
    \qquad I(\xi) = \int_0^\infty dk\,k \sum_p \ln\big(1 - r_p^2 e^{-2\kappa L}\big),

and :math:`\frac{\hbar}{4\pi^2}\int_0^\infty d\xi\,I(\xi)` at ``T = 0``. With
``t = 2 kappa L`` and ``t0 = 2 xi L / c``,
``I = J(t0) / (4 L^2)`` where ``J(t0) = int_{t0}^inf t sum_p ln(1 - r_p^2 e^{-t}) dt``.

``J`` is integrated with a fixed rule: geometrically graded Gauss-Legendre
panels on ``[t0, t0 + 1]``, which resolve the logarithmic behaviour of the
integrand near ``t = 0``, and a Gauss-Laguerre rule beyond. The rule does not
adapt to ``L``, so its error is a smooth function of ``L`` and finite
differences of the energy stay clean once the orders are frozen.

The proximity force approximation gives ``F_PFA = 2 pi R F_PP/A`` and
``F'_PFA = 2 pi R d(F_PP/A)/dL``. The coefficients
``beta = (R/L)(F/F_PFA - 1)`` and ``beta' = (R/L)(F'/F'_PFA - 1)`` measure
the leading correction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.constants import c, hbar, k as k_B
from scipy.special import zeta

from .materials import MaterialModel, PerfectReflector, epsilon, fresnel_dimensionless
from .quadrature import gauss_laguerre
from .scattering import Geometry
from .thermo import (
    Accuracy,
    ConvergenceError,
    InteractionResult,
    Prescription,
    _check_pairing,
    _five_point,
    _geometric_tail,
    _resolve_omega_p,
    force_and_gradient,
    matsubara_frequency,
    natural_prescription,
)

__all__ = [
    "PlateAccuracy",
    "PfaReference",
    "BetaEstimate",
    "BetaFit",
    "BOUND_BETA_PRIME",
    "lifshitz_pp",
    "lifshitz_pp_ideal",
    "pfa_reference",
    "beta_estimates",
    "extrapolate_beta",
    "violates_bound",
]

#: experimental bound on ``|beta'|`` for ``L`` in [150, 300] nm (95% confidence)
BOUND_BETA_PRIME = 0.4

_ZETA3 = float(zeta(3.0))


@dataclass(frozen=True)
class PlateAccuracy:
    """Quadrature and truncation knobs of the plate energy.

    Attributes
    ----------
    order : int
        Gauss-Laguerre order of the tail ``t > t0 + panel_width``.
    panel_order, levels, panel_width : int, int, float
        ``levels + 1`` Gauss-Legendre panels of ``panel_order`` nodes on
        ``[t0, t0 + panel_width]``, halving in width towards ``t0``.
    tol, max_doublings : float, int
        Orders are doubled until two successive rules agree to ``tol``; the
        lower of the two is kept.
    n_tol, n_min, n_cap : float, int, int
        Matsubara truncation, as in :class:`~sphereplane.thermo.Accuracy`.
    step_rel, step_min : float
        Finite-difference step ``h = max(step_rel L, step_min)``.
    """

    order: int = 80
    panel_order: int = 12
    levels: int = 24
    panel_width: float = 1.0
    tol: float = 1e-9
    max_doublings: int = 4
    n_tol: float = 1e-9
    n_min: int = 10
    n_cap: int = 20000
    step_rel: float = 1e-3
    step_min: float = 0.05e-9

    def __post_init__(self):
        if self.order < 1 or self.panel_order < 1 or self.levels < 0:
            raise ValueError("quadrature orders must be positive")
        if not 0 < self.tol < 1 or not 0 < self.n_tol < 1:
            raise ValueError("tolerances must lie in (0, 1)")
        if not self.panel_width > 0 or not self.step_min > 0 or not 0 < self.step_rel < 1:
            raise ValueError("panel_width, step_rel and step_min must be positive")
        if self.n_min < 1 or self.n_cap < self.n_min:
            raise ValueError("1 <= n_min <= n_cap required")


@dataclass(frozen=True)
class PfaReference:
    free_energy_per_area: float  #: J/m^2
    force: float  #: N
    force_gradient: float  #: N/m


@dataclass(frozen=True)
class BetaEstimate:
    """``beta``-type ratios at one geometry, with the inputs they came from."""

    L: float
    R: float
    beta_like: float
    beta_prime_like: float
    result: Optional[InteractionResult] = None
    reference: Optional[PfaReference] = None


@dataclass(frozen=True)
class BetaFit:
    """Linear least-squares fit ``value = intercept + slope L/R``."""

    intercept: float
    slope: float
    residuals: tuple
    rms: float


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------


@lru_cache(maxsize=32)
def _rule(order: int, panel_order: int, levels: int, width: float):
    """Nodes and weights of ``int_0^inf g(y) dy`` (graded panels + Laguerre)."""
    x, w = leggauss(panel_order)
    edges = [0.0] + [width * 2.0 ** (-k) for k in range(levels, -1, -1)]
    ys, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        ys.append(0.5 * (b - a) * x + 0.5 * (b + a))
        ws.append(0.5 * (b - a) * w)
    s, ln_w = gauss_laguerre(order)
    ys.append(width + s)
    ws.append(np.exp(ln_w + s))  # the rule integrates e^{-s} f, here f = e^{s} g
    y = np.concatenate(ys)
    wt = np.concatenate(ws)
    y.setflags(write=False)
    wt.setflags(write=False)
    return y, wt


def _rule_for(acc: PlateAccuracy, k: int):
    return _rule(acc.order << k, acc.panel_order << k, acc.levels, acc.panel_width)


def _log_factor(r2, t):
    return np.log1p(-r2 * np.exp(-t))


def _j_finite(t0: np.ndarray, L: float, model: MaterialModel, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``J(t0)`` for ``t0 > 0`` (array), both polarisations."""
    t0 = np.asarray(t0, dtype=float)
    t = t0[:, None] + y[None, :]
    if isinstance(model, PerfectReflector):
        vals = 2.0 * _log_factor(1.0, t)
    else:
        eps = np.asarray(epsilon(model, c * t0 / (2.0 * L)), dtype=float).reshape(-1, 1)
        r_tm, r_te = fresnel_dimensionless(t / t0[:, None], eps)
        vals = _log_factor(r_tm * r_tm, t) + _log_factor(r_te * r_te, t)
    return (t * vals) @ w


def _j_static_te_plasma(wL: float, y: np.ndarray, w: np.ndarray) -> float:
    """TE ``J(0)`` of plasma plates; ``wL = 2 L omega_p / c``."""
    root = np.sqrt(y * y + wL * wL)
    r = (y - root) / (y + root)
    return float((y * _log_factor(r * r, y)) @ w)


def _refined(evaluate, acc: PlateAccuracy, k0: int | None):
    """Value at doubling level ``k0``, or refine from level 0 when ``k0`` is None."""
    if k0 is not None:
        return evaluate(_rule_for(acc, k0)), k0
    cur = evaluate(_rule_for(acc, 0))
    for k in range(1, acc.max_doublings + 1):
        nxt = evaluate(_rule_for(acc, k))
        if abs(nxt - cur) <= acc.tol * abs(nxt):
            return cur, k - 1
        cur = nxt
    raise ConvergenceError(f"plate quadrature not converged after {acc.max_doublings} doublings")


# ---------------------------------------------------------------------------
# plate energy
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _PlateDisc:
    levels: tuple  #: doubling level per Matsubara term (or a single one at T = 0)
    static_level: int = 0


def _pp_T0(L, model, acc, frozen):
    def evaluate(rule):
        y, w = rule
        return float(_j_finite(y, L, model, y, w) @ w)

    val, k = _refined(evaluate, acc, frozen.levels[0] if frozen else None)
    return hbar * c / (32.0 * math.pi**2 * L**3) * val, _PlateDisc((k,))


def _pp_T(L, T, model, prescription, acc, omega_p, frozen):
    j0 = -_ZETA3  # TM, ideal reflection at xi -> 0 for every prescription
    static_level = 0
    if prescription is Prescription.PR:
        j0 -= _ZETA3
    elif prescription is Prescription.PLASMA:
        wL = 2.0 * L * _resolve_omega_p(model, omega_p) / c
        te, static_level = _refined(
            lambda rule: _j_static_te_plasma(wL, *rule), acc, frozen.static_level if frozen else None
        )
        j0 += te
    running = 0.5 * j0
    values, levels = [], []
    n = 0
    while True:
        n += 1
        t0 = 2.0 * matsubara_frequency(n, T) * L / c
        v, k = _refined(
            lambda rule: float(_j_finite(np.array([t0]), L, model, *rule)[0]),
            acc,
            frozen.levels[n - 1] if frozen else None,
        )
        running += v
        values.append(v)
        levels.append(k)
        if frozen:
            if n == len(frozen.levels):
                break
            continue
        if n >= acc.n_min and abs(v) <= acc.n_tol * abs(running):
            tail = _geometric_tail(values)
            if abs(tail) <= acc.n_tol * abs(running):
                break
        if n >= acc.n_cap:
            raise ConvergenceError(f"plate Matsubara sum not converged after {n} terms")
    tail = _geometric_tail(values)
    if not math.isfinite(tail):
        tail = 0.0
    total = k_B * T / (2.0 * math.pi) * (running + tail) / (4.0 * L * L)
    return total, _PlateDisc(tuple(levels), static_level)


def _pp(L, T, model, prescription, acc, omega_p, frozen=None):
    if not L > 0:
        raise ValueError(f"distance must be positive, got {L}")
    if T is None or T == 0:
        return _pp_T0(L, model, acc, frozen)
    if not T > 0:
        raise ValueError("temperature must be positive (or None/0 for T = 0)")
    return _pp_T(L, T, model, prescription, acc, omega_p, frozen)


def _prescription(model, T, prescription):
    if T is None or T == 0:
        return None
    p = Prescription(prescription) if prescription is not None else natural_prescription(model)
    _check_pairing(model, p)
    return p


def lifshitz_pp(
    L: float,
    T: float | None,
    model: MaterialModel,
    prescription=None,
    accuracy: PlateAccuracy = PlateAccuracy(),
    omega_p: float | None = None,
) -> float:
    """Free energy per area of two identical plates at distance ``L``, in J/m^2.

    Parameters
    ----------
    T : float or None
        Temperature in K; ``None`` or ``0`` selects the zero-temperature
        frequency integral.
    prescription : Prescription or str, optional
        ``n = 0`` treatment at ``T > 0``; defaults to the model's own.
        Drude keeps the ideal TM term only, plasma adds the TE term with
        ``omega_p``, the perfect reflector has both ideal.
    """
    p = _prescription(model, T, prescription)
    return _pp(L, T, model, p, accuracy, omega_p)[0]


def lifshitz_pp_ideal(L: float) -> float:
    """``-pi^2 hbar c / (720 L^3)``, ideal mirrors at ``T = 0``."""
    return -math.pi**2 * hbar * c / (720.0 * L**3)


def pfa_reference(
    geom: Geometry,
    T: float | None,
    model: MaterialModel,
    prescription=None,
    accuracy: PlateAccuracy = PlateAccuracy(),
    omega_p: float | None = None,
) -> PfaReference:
    """PFA force and gradient from five-point stencils on the plate energy.

    The orders are chosen at ``L`` and frozen for the stencil points.
    """
    p = _prescription(model, T, prescription)
    L = geom.L
    h = max(accuracy.step_rel * L, accuracy.step_min)
    if h >= 0.5 * L:
        raise ValueError(f"step {h:.3e} m too large for L = {L:.3e} m")
    e0, disc = _pp(L, T, model, p, accuracy, omega_p)
    e = [_pp(L + k * h, T, model, p, accuracy, omega_p, disc)[0] if k else e0 for k in (-2, -1, 0, 1, 2)]
    minus_slope, _ = _five_point(e, h)
    scale = 2.0 * math.pi * geom.R
    return PfaReference(e0, scale * e0, -scale * minus_slope)


# ---------------------------------------------------------------------------
# beyond-PFA coefficients
# ---------------------------------------------------------------------------


def beta_estimates(
    geom: Geometry,
    T: float | None,
    model: MaterialModel,
    prescription=None,
    accuracy: Accuracy = Accuracy(),
    plate_accuracy: PlateAccuracy = PlateAccuracy(),
    omega_p: float | None = None,
    result: InteractionResult | None = None,
) -> BetaEstimate:
    """``beta``-type ratios ``(R/L)(F/F_PFA - 1)`` and ``(R/L)(F'/F'_PFA - 1)``.

    ``result`` may carry a precomputed sphere-plane evaluation at ``geom``.
    """
    if result is None:
        result = force_and_gradient(geom, model, T, prescription, accuracy, omega_p)
    ref = pfa_reference(geom, T, model, prescription, plate_accuracy, omega_p)
    asp = geom.aspect_ratio
    return BetaEstimate(
        geom.L,
        geom.R,
        asp * (result.force / ref.force - 1.0),
        asp * (result.force_gradient / ref.force_gradient - 1.0),
        result,
        ref,
    )


def extrapolate_beta(estimates: Sequence[BetaEstimate], which: str = "beta_like") -> BetaFit:
    """Fit ``value = intercept + slope L/R`` by least squares.

    The residuals are reported rather than modelled: a correction that is not
    of the form ``beta L/R`` (or has logarithmic sub-leading terms) shows up
    there instead of being absorbed silently.
    """
    if which not in ("beta_like", "beta_prime_like"):
        raise ValueError("which must be 'beta_like' or 'beta_prime_like'")
    if len(estimates) < 2:
        raise ValueError("extrapolation needs at least two estimates")
    x = np.array([e.L / e.R for e in estimates])
    v = np.array([getattr(e, which) for e in estimates])
    A = np.vstack([np.ones_like(x), x]).T
    (a, b), *_ = np.linalg.lstsq(A, v, rcond=None)
    res = v - (a + b * x)
    return BetaFit(float(a), float(b), tuple(float(r) for r in res), float(np.sqrt(np.mean(res * res))))


def violates_bound(beta_prime: float, bound: float = BOUND_BETA_PRIME) -> bool:
    """True when ``|beta'| >= bound``, outside the experimentally allowed region."""
    return abs(beta_prime) >= bound
