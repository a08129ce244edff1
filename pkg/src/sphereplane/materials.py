r"""Dielectric response on the imaginary frequency axis and Fresnel coefficients.

All frequencies are angular frequencies in rad/s and lengths in m. The
permittivity of every model is evaluated at :math:`\omega = i\xi`, where it is
real and larger than one.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Union

import numpy as np
from scipy.constants import c, e, hbar

__all__ = [
    "EV",
    "MaterialModel",
    "PerfectReflector",
    "Plasma",
    "Drude",
    "Tabulated",
    "FresnelPair",
    "ParseError",
    "epsilon",
    "fresnel",
    "fresnel_dimensionless",
    "load_tabulated",
    "default_gold",
    "DEFAULT_OMEGA_P_EV",
    "DEFAULT_GAMMA_EV",
]

EV = e / hbar  #: 1 eV expressed as an angular frequency, rad/s

DEFAULT_OMEGA_P_EV = 9.0
#: Drude relaxation rate for gold; a conventional value, override as needed.
DEFAULT_GAMMA_EV = 0.035


class ParseError(ValueError):
    """Malformed permittivity table."""


@dataclass(frozen=True)
class PerfectReflector:
    """Ideal mirror, the :math:`\\varepsilon \\to \\infty` limit."""

    name = "pr"


@dataclass(frozen=True)
class Plasma:
    omega_p: float

    def __post_init__(self):
        if not self.omega_p > 0:
            raise ValueError(f"plasma frequency must be positive, got {self.omega_p}")

    name = "plasma"


@dataclass(frozen=True)
class Drude:
    omega_p: float
    gamma: float

    def __post_init__(self):
        if not self.omega_p > 0:
            raise ValueError(f"plasma frequency must be positive, got {self.omega_p}")
        if not self.gamma >= 0:
            raise ValueError(f"relaxation rate must be non-negative, got {self.gamma}")

    name = "drude"


@dataclass(frozen=True)
class Tabulated:
    """Sampled :math:`\\varepsilon(i\\xi)` with physical extrapolation on both ends.

    Interpolation is linear in ``(ln xi, ln(eps - 1))``. Above the last node
    ``eps = 1 + A/xi**2`` with ``A`` matched to that node; below the first
    node a Drude form fitted to the two lowest nodes (``low``).
    """

    xi: tuple
    eps: tuple
    low: Drude

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float)
        eps = np.asarray(self.eps, dtype=float)
        if xi.size < 2 or xi.size != eps.size:
            raise ValueError("a tabulated model needs at least two (xi, eps) samples")
        if np.any(np.diff(xi) <= 0) or xi[0] <= 0:
            raise ValueError("tabulated xi must be positive and strictly increasing")
        if np.any(eps <= 1):
            raise ValueError("tabulated eps must exceed 1")

    name = "tabulated"

    @property
    def omega_p(self) -> float:
        return self.low.omega_p

    @property
    def gamma(self) -> float:
        return self.low.gamma


MaterialModel = Union[PerfectReflector, Plasma, Drude, Tabulated]


@dataclass(frozen=True)
class FresnelPair:
    r_tm: float
    r_te: float


def _fit_drude(xi1: float, eps1: float, xi2: float, eps2: float) -> Drude:
    # eps - 1 = wp^2 / (xi (xi + g))  =>  xi (xi + g) (eps - 1) = wp^2 at both nodes
    a1, a2 = eps1 - 1.0, eps2 - 1.0
    g = (xi2 * xi2 * a2 - xi1 * xi1 * a1) / (xi1 * a1 - xi2 * a2)
    if not g >= 0 or not np.isfinite(g):
        # data steeper than Drude allows; fall back to a pure plasma fit at the first node
        g = 0.0
    wp2 = xi1 * (xi1 + g) * a1
    return Drude(math.sqrt(wp2), g)


def make_tabulated(xi, eps) -> Tabulated:
    """Build a :class:`Tabulated` model, fitting the low-frequency Drude tail."""
    xi = tuple(float(v) for v in xi)
    eps = tuple(float(v) for v in eps)
    if len(xi) < 2:
        raise ValueError("a tabulated model needs at least two samples")
    low = _fit_drude(xi[0], eps[0], xi[1], eps[1])
    return Tabulated(xi, eps, low)


def _eps_drude(omega_p: float, gamma: float, xi):
    return 1.0 + omega_p * omega_p / (xi * (xi + gamma))


def _eps_tabulated(model: Tabulated, xi):
    xs = np.asarray(model.xi)
    es = np.asarray(model.eps)
    xi_arr = np.asarray(xi, dtype=float)
    out = np.empty_like(xi_arr)
    lo = xi_arr < xs[0]
    hi = xi_arr > xs[-1]
    mid = ~(lo | hi)
    out[lo] = _eps_drude(model.low.omega_p, model.low.gamma, xi_arr[lo])
    out[hi] = 1.0 + (es[-1] - 1.0) * (xs[-1] / xi_arr[hi]) ** 2
    out[mid] = 1.0 + np.exp(np.interp(np.log(xi_arr[mid]), np.log(xs), np.log(es - 1.0)))
    # exact node values, immune to exp(log()) rounding
    idx = np.searchsorted(xs, xi_arr[mid])
    idx = np.clip(idx, 0, xs.size - 1)
    hit = xs[idx] == xi_arr[mid]
    sub = out[mid]
    sub[hit] = es[idx[hit]]
    out[mid] = sub
    return out if out.ndim else float(out)


def epsilon(model: MaterialModel, xi):
    r"""Permittivity :math:`\varepsilon(i\xi)`; ``xi`` in rad/s, scalar or array.

    Raises ``ValueError`` for ``xi <= 0`` and for a perfect reflector, whose
    permittivity is infinite and handled by the callers as a separate case.
    """
    xi_arr = np.asarray(xi, dtype=float)
    if np.any(xi_arr <= 0):
        raise ValueError("epsilon is defined here for xi > 0 only")
    if isinstance(model, PerfectReflector):
        raise ValueError("a perfect reflector has no finite permittivity")
    if isinstance(model, Plasma):
        out = 1.0 + model.omega_p**2 / xi_arr**2
    elif isinstance(model, Drude):
        out = _eps_drude(model.omega_p, model.gamma, xi_arr)
    elif isinstance(model, Tabulated):
        return _eps_tabulated(model, xi_arr)
    else:
        raise TypeError(f"unknown material model {model!r}")
    return out if out.ndim else float(out)


def fresnel_dimensionless(x, eps):
    r"""Fresnel amplitudes in terms of :math:`x = c\kappa/\xi \ge 1`.

    With :math:`\kappa_m/\kappa = \sqrt{x^2 - 1 + \varepsilon}/x`. ``eps=None``
    means perfect reflector. Returns ``(r_tm, r_te)`` arrays.
    """
    x = np.asarray(x, dtype=float)
    if eps is None:
        return np.ones_like(x), -np.ones_like(x)
    root = np.sqrt(x * x - 1.0 + eps)
    r_te = (x - root) / (x + root)
    r_tm = (eps * x - root) / (eps * x + root)
    return r_tm, r_te


def fresnel(k: float, xi: float, model: MaterialModel) -> FresnelPair:
    r"""Reflection amplitudes of the plane at transverse wavenumber ``k`` (rad/m)."""
    if k < 0 or not xi > 0:
        raise ValueError("fresnel needs k >= 0 and xi > 0")
    if isinstance(model, PerfectReflector):
        return FresnelPair(1.0, -1.0)
    eps = epsilon(model, xi)
    kappa = math.sqrt(k * k + (xi / c) ** 2)
    kappa_m = math.sqrt(k * k + eps * (xi / c) ** 2)
    r_tm = (eps * kappa - kappa_m) / (eps * kappa + kappa_m)
    r_te = (kappa - kappa_m) / (kappa + kappa_m)
    return FresnelPair(r_tm, r_te)


def load_tabulated(source: Union[str, Path, IO]) -> Tabulated:
    """Read a two-column ``xi  eps`` table (rad/s, dimensionless).

    ``source`` may be a path or an open text/binary stream. Lines starting
    with ``#`` and blank lines are skipped.
    """
    if isinstance(source, (str, Path)):
        with open(source, "rb") as fh:
            data = fh.read()
    else:
        data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    xi, eps = [], []
    for lineno, line in enumerate(io.StringIO(data), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split()
        if len(parts) != 2:
            raise ParseError(f"line {lineno}: expected two columns, got {len(parts)}")
        try:
            x, ev = float(parts[0]), float(parts[1])
        except ValueError:
            raise ParseError(f"line {lineno}: cannot parse numbers from {stripped!r}") from None
        if not (np.isfinite(x) and np.isfinite(ev)) or x <= 0:
            raise ParseError(f"line {lineno}: xi must be a positive finite number")
        if ev <= 1:
            raise ParseError(f"line {lineno}: eps must exceed 1, got {ev}")
        if xi and x <= xi[-1]:
            raise ParseError(f"line {lineno}: xi values must be strictly increasing")
        xi.append(x)
        eps.append(ev)
    if len(xi) < 2:
        raise ParseError("table needs at least two data lines")
    return make_tabulated(xi, eps)


def default_gold(omega_p_ev: float = DEFAULT_OMEGA_P_EV, gamma_ev: float = DEFAULT_GAMMA_EV) -> Drude:
    """Drude gold with the documented default parameters (in eV)."""
    return Drude(omega_p_ev * EV, gamma_ev * EV)
