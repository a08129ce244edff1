r"""Round-trip blocks of the sphere-plane geometry in the multipole basis.

For fixed azimuthal index ``m`` and imaginary frequency ``xi`` the symmetrised
round-trip operator is written as a Gram matrix

.. math::

    \mathcal{M}^{(m)}_{ij} = \sum_{p,k} U_{(p,k), i}\,U_{(p,k), j},

where ``i, j`` run over (multipole ``l``, polarisation) pairs and ``(p, k)``
over the plane's polarisation channel and the transverse-momentum quadrature
node. Each column of ``U`` is the square root of the sphere's Mie
coefficient times the plane-wave projection of that multipole, each row
carries the square root of the quadrature weight, the plane's Fresnel
amplitude and the two translations :math:`e^{-\kappa(L+R)}`. All factors are
combined as logarithms and exponentiated once per entry of ``U``; an entry of
``U`` squared is a positive share of a diagonal element of the round trip, so
it cannot overflow.

Index layout
------------
Rows and columns of a block are ordered ``l``-major, polarisation-minor:
index ``2 (l - lmin) + p`` with ``p = 0`` for the electric (TM) and ``p = 1``
for the magnetic (TE) multipole. Contiguous indices are close in ``l``,
which is what the hierarchical solver clusters on.

Dimensionless variables
-----------------------
With :math:`\tau = 2\xi(L+R)/c` and :math:`x = c\kappa/\xi \ge 1` the
substitution :math:`x = 1 + t/\tau` turns the momentum integral into
:math:`\int_0^\infty e^{-t}(\dots)\,dt`, integrated with Gauss-Laguerre rules.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit
from scipy import integrate
from scipy.constants import c
from scipy.special import gammaln

from .materials import MaterialModel, PerfectReflector, epsilon, fresnel_dimensionless
from .quadrature import QuadratureRule, gauss_laguerre
from .specfun import legendre_table, mie_sequence, mie_static_te_plasma, static_mie_pr

__all__ = [
    "Geometry",
    "BlockSpec",
    "RoundTripBlock",
    "BlockKernel",
    "QuadratureError",
    "ELL_FLOOR",
    "DEFAULT_ETA",
    "assemble_block",
    "refine_order",
    "choose_ell_max",
    "block_as_kernel",
    "static_kernel",
]

ELL_FLOOR = 20
DEFAULT_ETA = 5.0
ELEMENT_TOL = 1e-10
MAX_DOUBLINGS = 4


class QuadratureError(RuntimeError):
    """Momentum quadrature did not converge within the refinement budget."""

    def __init__(self, m: int, xi: float, lmax: int, detail: str = ""):
        self.m, self.xi, self.lmax = m, xi, lmax
        msg = f"quadrature not converged for m={m}, xi={xi:.6g} rad/s, lmax={lmax}"
        super().__init__(msg + (f": {detail}" if detail else ""))


@dataclass(frozen=True)
class Geometry:
    """Sphere of radius ``R`` at surface-to-surface distance ``L`` from a plane (both in m)."""

    R: float
    L: float

    def __post_init__(self):
        if not (self.R > 0 and self.L > 0):
            raise ValueError(f"R and L must be positive, got R={self.R}, L={self.L}")

    @property
    def center_distance(self) -> float:
        return self.L + self.R

    @property
    def aspect_ratio(self) -> float:
        return self.R / self.L

    def with_distance(self, L: float) -> "Geometry":
        return Geometry(self.R, L)

    def scaled(self, s: float) -> "Geometry":
        return Geometry(s * self.R, s * self.L)


def choose_ell_max(geom: Geometry, eta: float = DEFAULT_ETA, floor: int = ELL_FLOOR) -> int:
    """Multipole cutoff ``max(floor, ceil(eta R/L))``."""
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    # guard against ceil(5.000000000001) from R/L round-off
    return max(floor, int(math.ceil(eta * geom.aspect_ratio - 1e-9)))


def _ln_norm(m: int, ls: np.ndarray) -> np.ndarray:
    # N_lm / sqrt(l(l+1)), N_lm^2 = (2l+1)/2 (l-m)!/(l+m)!
    return 0.5 * (
        np.log(2 * ls + 1.0) - math.log(2.0) + gammaln(ls - m + 1.0) - gammaln(ls + m + 1.0)
    ) - 0.5 * np.log(ls * (ls + 1.0))


@dataclass(frozen=True)
class BlockSpec:
    """Everything that determines one round-trip block at ``xi > 0``."""

    m: int
    xi: float
    geom: Geometry
    model: MaterialModel
    lmax: int
    order: int

    def __post_init__(self):
        if self.m < 0:
            raise ValueError(f"m must be non-negative, got {self.m}")
        if not self.xi > 0:
            raise ValueError("finite-frequency blocks need xi > 0; use static_kernel at xi = 0")
        if self.lmax < max(1, self.m):
            raise ValueError(f"lmax={self.lmax} below lmin={max(1, self.m)}")

    @property
    def lmin(self) -> int:
        return max(1, self.m)

    @property
    def dim(self) -> int:
        return 2 * (self.lmax - self.lmin + 1)

    def with_order(self, order: int) -> "BlockSpec":
        return BlockSpec(self.m, self.xi, self.geom, self.model, self.lmax, order)

    def factor(self) -> np.ndarray:
        """Gram factor ``U`` with ``M = U.T @ U``.

        Shape ``(rows, dim)`` with ``rows <= 2 * order``: quadrature nodes
        whose contributions all fall below ``1e-60`` are dropped.
        """
        return _factor(self.m, self.xi, self.geom.R, self.geom.L, self.model, self.lmax, self.order)


def _factor(m, xi, R, L, model, lmax, order):
    tau = 2.0 * xi * (L + R) / c
    t, lw = gauss_laguerre(order)
    x = 1.0 + t / tau
    lmin = max(1, m)
    ln_a, ln_b = mie_sequence(lmax, xi, R, model)
    ln_a = ln_a[lmin - 1 :]
    ln_b = ln_b[lmin - 1 :]
    ln_p, ln_dp = legendre_table(m, lmax, x)
    if m == 0:
        ln_p, ln_dp = ln_p[1:], ln_dp[1:]
    ls = np.arange(lmin, lmax + 1, dtype=float)
    lnc = _ln_norm(m, ls)
    eps = None if isinstance(model, PerfectReflector) else epsilon(model, xi)
    r_tm, r_te = fresnel_dimensionless(x, eps)
    # sqrt of 2 w_k e^{-tau} / tau; e^{-t} sits in the Laguerre weight
    row = 0.5 * (math.log(2.0) + lw - math.log(tau) - tau)
    ln_s = 0.5 * np.log((x - 1.0) * (x + 1.0))
    with np.errstate(divide="ignore"):
        ln_ga = (math.log(m) if m else -np.inf) + ln_p - ln_s[None, :]  # m P / sqrt(x^2-1)
    ln_gb = ln_dp  # sqrt(x^2-1) P'
    with np.errstate(divide="ignore"):
        rv = row[None, :] + 0.5 * np.log(np.abs(np.vstack([r_tm, r_te])))
    ce = lnc + 0.5 * ln_a
    cm = lnc + 0.5 * ln_b
    # nodes whose every entry would flush to zero carry nothing and are dropped
    top = _column_peak(ce, cm, ln_ga, ln_gb)
    nodes = np.concatenate(
        [np.flatnonzero(rv[0] + top[0] >= _LN_FLUSH), order + np.flatnonzero(rv[1] + top[1] >= _LN_FLUSH)]
    )
    # built as U^T, C-ordered, so that U itself is a Fortran-ordered view
    Ut = np.empty((2 * ls.size, nodes.size))
    _fill_factor(Ut, nodes, rv, ce, cm, ln_ga, ln_gb, _LN_FLUSH)
    return Ut.T


# Entries of U below e^-138 ~ 1e-60 change elements of M by < 1e-60 but
# their products are subnormal, which slows BLAS down several-fold.
_LN_FLUSH = -138.0


@njit(cache=True, nogil=True)
def _column_peak(ce, cm, ln_ga, ln_gb):  # pragma: no cover - compiled
    # largest log-entry per node for the TM (row 0) and TE (row 1) channel
    nl, order = ln_ga.shape
    top = np.full((2, order), -np.inf)
    for j in range(nl):
        for i in range(order):
            tm = max(ce[j] + ln_gb[j, i], cm[j] + ln_ga[j, i])
            te = max(ce[j] + ln_ga[j, i], cm[j] + ln_gb[j, i])
            if tm > top[0, i]:
                top[0, i] = tm
            if te > top[1, i]:
                top[1, i] = te
    return top


@njit(cache=True, nogil=True)
def _fill_factor(Ut, nodes, rv, ce, cm, ln_ga, ln_gb, flush):  # pragma: no cover - compiled
    # TM channel: electric multipoles couple through g_B, magnetic through g_A;
    # the TE channel swaps the two
    nl, order = ln_ga.shape
    for j in range(nl):
        for col in range(nodes.size):
            node = nodes[col]
            ch = node // order
            i = node - ch * order
            if ch == 0:
                ae = rv[0, i] + ce[j] + ln_gb[j, i]
                am = rv[0, i] + cm[j] + ln_ga[j, i]
            else:
                ae = rv[1, i] + ce[j] + ln_ga[j, i]
                am = rv[1, i] + cm[j] + ln_gb[j, i]
            Ut[2 * j, col] = math.exp(ae) if ae >= flush else 0.0
            Ut[2 * j + 1, col] = math.exp(am) if am >= flush else 0.0


@dataclass(frozen=True)
class RoundTripBlock:
    """Materialised round-trip block for one ``(m, xi)``.

    ``entries`` is indexed ``2 (l - lmin) + p`` as described in the module
    docstring. ``order`` is the momentum quadrature order actually used.
    """

    m: int
    xi: float
    lmin: int
    lmax: int
    entries: np.ndarray
    order: int

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def diagonal_dominance(self) -> float:
        """``min_i (1 - M_ii - sum_{j != i} |M_ij|)``; positive means ``1 - M`` is diagonally dominant."""
        a = np.abs(self.entries)
        off = a.sum(axis=1) - np.diag(a)
        return float(np.min(1.0 - np.diag(self.entries) - off))


def _probe(U: np.ndarray) -> np.ndarray:
    # diagonal and the first two super-diagonals, i.e. same-l E/M and l, l+1
    n = U.shape[1]
    out = [np.einsum("ki,ki->i", U, U)]
    for off in (1, 2):
        if n > off:
            out.append(np.einsum("ki,ki->i", U[:, :-off], U[:, off:]))
    return np.concatenate(out)


def refine_order(spec: BlockSpec, tol: float = ELEMENT_TOL, max_doublings: int = MAX_DOUBLINGS) -> BlockSpec:
    """Double the quadrature order until probed elements are stable to ``tol``.

    The probe covers the diagonal and the first two super-diagonals. An
    element counts as converged if it changed by less than ``tol`` times its
    own size, or by less than ``tol * 1e-6`` in absolute terms (entries that
    small do not move ``det(1 - M)`` at double precision).

    Returns the first spec whose elements agree with the doubled order.

    Raises
    ------
    QuadratureError
        If no agreement is reached after ``max_doublings`` doublings.
    """
    cur = spec
    p_cur = _probe(cur.factor())
    for _ in range(max_doublings):
        nxt = cur.with_order(2 * cur.order)
        p_nxt = _probe(nxt.factor())
        diff = np.abs(p_nxt - p_cur)
        if np.all(diff <= tol * np.maximum(np.abs(p_nxt), 1e-6)):
            return cur
        cur, p_cur = nxt, p_nxt
    raise QuadratureError(spec.m, spec.xi, spec.lmax, f"order {cur.order} still changing")


class BlockKernel:
    """On-demand element generator for a round-trip block.

    Elements are produced from a cached Gram factor (finite frequency) or a
    closed form (zero frequency). ``block(rows, cols)`` is the primitive;
    every other accessor goes through it, so an element has the same value
    however it is requested. Reads are counted in ``entries_read``; the
    factor is built once under a lock, after which the kernel is read-only
    and safe to share between threads.
    """

    def __init__(self, n: int, make_block, diagonal=None, factor=None):
        self.n = int(n)
        self._make_block = make_block
        self._diagonal = diagonal
        self._factor = factor
        self._lock = threading.Lock()
        self.entries_read = 0

    def _count(self, k: int):
        with self._lock:
            self.entries_read += k

    def _check(self, idx: np.ndarray):
        if idx.size and (idx.min() < 0 or idx.max() >= self.n):
            raise IndexError(f"index out of range for a block of dimension {self.n}")

    def block(self, rows, cols) -> np.ndarray:
        rows = np.atleast_1d(np.asarray(rows, dtype=np.intp))
        cols = np.atleast_1d(np.asarray(cols, dtype=np.intp))
        self._check(rows)
        self._check(cols)
        self._count(rows.size * cols.size)
        return self._make_block(rows, cols)

    def __call__(self, i: int, j: int) -> float:
        return float(self.block([i], [j])[0, 0])

    def row(self, i: int, cols=None) -> np.ndarray:
        cols = np.arange(self.n) if cols is None else cols
        return self.block([i], cols)[0]

    def col(self, j: int, rows=None) -> np.ndarray:
        rows = np.arange(self.n) if rows is None else rows
        return self.block(rows, [j])[:, 0]

    def diagonal(self) -> np.ndarray:
        if self._diagonal is not None:
            self._count(self.n)
            return self._diagonal()
        idx = np.arange(self.n)
        return np.array([self(i, i) for i in idx])

    def materialize(self) -> np.ndarray:
        idx = np.arange(self.n)
        return self.block(idx, idx)

    @property
    def has_factor(self) -> bool:
        return self._factor is not None

    def factor(self):
        """Gram factor ``U`` with ``M = U.T @ U`` if the kernel has one, else ``None``."""
        return None if self._factor is None else self._factor()


class _FactorHolder:
    def __init__(self, spec: BlockSpec):
        self.spec = spec
        self._U = None
        self._lock = threading.Lock()

    def get(self) -> np.ndarray:
        if self._U is None:
            with self._lock:
                if self._U is None:
                    U = np.asfortranarray(self.spec.factor())  # no copy for a fresh factor
                    U.setflags(write=False)
                    self._U = U
        return self._U


def _columns(U: np.ndarray, idx: np.ndarray) -> np.ndarray:
    # contiguous ranges become views, which spares a copy of U
    if idx.size > 1 and idx[-1] - idx[0] == idx.size - 1 and np.all(np.diff(idx) == 1):
        return U[:, idx[0] : idx[-1] + 1]
    return U[:, idx]


def block_as_kernel(spec: BlockSpec) -> BlockKernel:
    """Element generator for ``spec`` without materialising the block.

    Element ``(i, j)`` is the quadrature sum ``U[:, i] . U[:, j]``; blocks of
    elements are one matrix product over the selected columns.
    """
    holder = _FactorHolder(spec)

    def make(rows, cols):
        U = holder.get()
        return _columns(U, rows).T @ _columns(U, cols)

    def diag():
        U = holder.get()
        return np.einsum("ki,ki->i", U, U)

    return BlockKernel(spec.dim, make, diagonal=diag, factor=holder.get)


def assemble_block(
    m: int,
    xi: float,
    geom: Geometry,
    model: MaterialModel,
    lmax: int,
    rule: QuadratureRule | None = None,
    tol: float = ELEMENT_TOL,
    refine: bool = True,
) -> RoundTripBlock:
    """Materialise the round-trip block for ``(m, xi)``.

    Parameters
    ----------
    m : int
        Azimuthal index, ``m >= 0``.
    xi : float
        Imaginary frequency in rad/s, ``> 0``.
    geom : Geometry
    model : MaterialModel
        Material of both sphere and plane.
    lmax : int
        Largest multipole, ``>= max(1, m)``.
    rule : QuadratureRule, optional
        Starting momentum rule; default ``QuadratureRule.for_lmax(lmax)``.
    tol : float
        Element tolerance for the doubling refinement.
    refine : bool
        If false, use ``rule`` as given.

    Returns
    -------
    RoundTripBlock
        Symmetric block; ``entries = U.T @ U`` is symmetric by construction.
    """
    rule = rule or QuadratureRule.for_lmax(lmax)
    spec = BlockSpec(m, xi, geom, model, lmax, rule.order)
    if refine:
        spec = refine_order(spec, tol)
    kern = block_as_kernel(spec)
    return RoundTripBlock(m, xi, spec.lmin, lmax, kern.materialize(), spec.order)


# ---------------------------------------------------------------------------
# xi = 0
# ---------------------------------------------------------------------------


def _ln_lead(m: int, ls: np.ndarray) -> np.ndarray:
    # P_l^m(x) ~ (2l)! / (2^l l! (l-m)!) x^l for x -> infinity
    return gammaln(2 * ls + 1) - ls * math.log(2.0) - gammaln(ls + 1) - gammaln(ls - m + 1)


@lru_cache(maxsize=256)
def _ln_te_plasma_moments(w: float, nmax: int) -> np.ndarray:
    r"""``ln(J_n(w) / n!)`` for ``n = 0..nmax`` where
    :math:`J_n(w) = \int_0^\infty s^n e^{-s} |r_{TE}(s)|\,ds`,
    :math:`|r_{TE}(s)| = w^2 / (s + \sqrt{s^2 + w^2})^2`.
    """
    out = np.empty(nmax + 1)
    for n in range(nmax + 1):
        lnf = gammaln(n + 1.0)

        def f(s, n=n, lnf=lnf):
            if s <= 0:
                return 1.0 if n == 0 else 0.0
            r = w * w / (s + math.hypot(s, w)) ** 2
            return math.exp(n * math.log(s) - s - lnf) * r

        width = 40.0 * math.sqrt(n + 1.0) + 40.0
        lo, hi = max(0.0, n - width), n + width
        pts = [p for p in (float(n), w) if lo < p < hi]
        val, _ = integrate.quad(f, lo, hi, points=pts or None, epsabs=0.0, epsrel=1e-13, limit=200)
        out[n] = math.log(val)
    return out


def static_kernel(geom: Geometry, m: int, lmax: int, polarization: str, omega_p: float | None = None) -> BlockKernel:
    r"""Zero-frequency round-trip block for one polarisation.

    At :math:`\xi = 0` the polarisations decouple. With
    :math:`y = R / (2(L+R))` the TM block (perfect reflection at both
    bodies, whatever the material) is

    .. math::

        M_{\ell_1\ell_2} = 2 c_{\ell_1} c_{\ell_2} \sqrt{A_{\ell_1}A_{\ell_2}}\,
        \ell_1\ell_2\,\tilde c_{\ell_1}\tilde c_{\ell_2}\,(\ell_1+\ell_2)!\,
        y^{\ell_1+\ell_2+1},

    with :math:`|a_\ell| \to A_\ell \chi^{2\ell+1}` and :math:`\tilde c_\ell`
    the leading coefficient of :math:`P_\ell^m`. The TE block has the same
    shape with the magnetic coefficient; for a plasma the factorial becomes
    :math:`J_{\ell_1+\ell_2}(w)`, :math:`w = 2(L+R)\omega_P/c`, and the
    sphere coefficient picks up :math:`I_{\ell+3/2}(\Omega)/I_{\ell-1/2}(\Omega)`,
    :math:`\Omega = \omega_P R/c`.

    Parameters
    ----------
    polarization : {"TM", "TE"}
    omega_p : float, optional
        Plasma frequency for the TE block; ``None`` means perfect reflector.
        Ignored for TM.
    """
    if polarization not in ("TM", "TE"):
        raise ValueError(f"polarization must be 'TM' or 'TE', got {polarization!r}")
    lmin = max(1, m)
    if lmax < lmin:
        raise ValueError(f"lmax={lmax} below lmin={lmin}")
    ls = np.arange(lmin, lmax + 1, dtype=float)
    ln_y = math.log(geom.R / (2.0 * geom.center_distance))
    ln_pa, ln_pb = static_mie_pr(lmax)
    if polarization == "TM" or omega_p is None:
        ln_mie = (ln_pa if polarization == "TM" else ln_pb)[lmin - 1 :]
        nsum = np.arange(2 * lmax + 1, dtype=float)
        h = gammaln(nsum + 1.0) + (nsum + 1.0) * ln_y
    else:
        if not omega_p > 0:
            raise ValueError("omega_p must be positive")
        ln_mie = mie_static_te_plasma(lmax, omega_p * geom.R / c)[lmin - 1 :]
        w = 2.0 * geom.center_distance * omega_p / c
        nsum = np.arange(2 * lmax + 1, dtype=float)
        h = _ln_te_plasma_moments(w, 2 * lmax) + gammaln(nsum + 1.0) + (nsum + 1.0) * ln_y
    f = 0.5 * math.log(2.0) + _ln_norm(m, ls) + 0.5 * ln_mie + np.log(ls) + _ln_lead(m, ls)
    lidx = ls.astype(np.intp)

    def make(rows, cols):
        return np.exp(f[rows, None] + f[None, cols] + h[lidx[rows, None] + lidx[None, cols]])

    def diag():
        return np.exp(2.0 * f + h[2 * lidx])

    return BlockKernel(ls.size, make, diagonal=diag)
