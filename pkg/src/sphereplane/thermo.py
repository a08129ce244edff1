r"""Casimir free energy, force and force gradient of the sphere-plane system.

At temperature :math:`T > 0`

.. math::

    \mathcal{F} = k_B T \Big[\tfrac12\,\Theta(0) + \sum_{n\ge1}\Theta(\xi_n)\Big],
    \qquad \Theta(\xi) = \sum_{m} w_m \ln\det\big(1 - \mathcal{M}^{(m)}(\xi)\big),

with :math:`\xi_n = 2\pi n k_B T/\hbar`, :math:`w_0 = 1` and :math:`w_{m>0} = 2`.
The ``n = 0`` term depends on the prescription (Drude, plasma or perfect
reflector) and is computed from closed-form static blocks. At ``T = 0`` the
sum becomes :math:`\frac{\hbar}{2\pi}\int_0^\infty d\xi\,\Theta(\xi)`.

Force and gradient come from five-point stencils on the free energy. The
discretisation (multipole cutoff, momentum quadrature orders, number of
``m`` blocks and frequencies) is chosen at the central distance and then
frozen for the other stencil points, so that truncation errors are the same
smooth function of ``L`` at every point and cancel in the differences.
"""
from __future__ import annotations

import math
import time
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from numpy.polynomial.legendre import leggauss
from scipy.constants import c, hbar, k as k_B

from .hodlr import NonPhysicalMatrixError, SolverConfig, logdet
from .materials import MaterialModel, PerfectReflector, Plasma
from .quadrature import QuadratureRule
from .scattering import (
    ELEMENT_TOL,
    ELL_FLOOR,
    DEFAULT_ETA,
    BlockSpec,
    Geometry,
    block_as_kernel,
    choose_ell_max,
    refine_order,
    static_kernel,
)

__all__ = [
    "Prescription",
    "Accuracy",
    "ConvergenceError",
    "StencilError",
    "MatsubaraTerm",
    "ZeroFrequency",
    "MatsubaraLedger",
    "Discretization",
    "Diagnostics",
    "InteractionResult",
    "matsubara_frequency",
    "natural_prescription",
    "term",
    "zero_freq_tm",
    "zero_freq_te_plasma",
    "zero_freq_term",
    "free_energy",
    "free_energy_T0",
    "force_and_gradient",
    "stencil_step",
]


class ConvergenceError(RuntimeError):
    """A Matsubara, ``m`` or frequency-quadrature sum did not converge within its cap."""


class StencilError(RuntimeError):
    """Force estimates from two step sizes disagree; tighten the energy tolerances."""


class Prescription(str, Enum):
    DRUDE = "drude"
    PLASMA = "plasma"
    PR = "pr"


@dataclass(frozen=True)
class Accuracy:
    """Tolerances and discretisation knobs of a free-energy evaluation.

    Attributes
    ----------
    eta, ell_floor : float, int
        Multipole cutoff ``max(ell_floor, ceil(eta R/L))``.
    element_tol : float
        Relative tolerance of the momentum-quadrature refinement.
    m_tol : float
        The ``m`` sum stops at the first block whose contribution is below
        ``m_tol`` times the running sum.
    n_tol, n_min, n_cap : float, int, int
        The Matsubara sum stops at the first ``n >= n_min`` whose term and
        geometric tail estimate are below ``n_tol`` times the running sum.
    xi_order, xi_scale, xi_tol : int, float, float or None
        Zero-temperature frequency rule: ``xi_order`` Gauss-Legendre nodes in
        ``s`` with ``u = 2 xi L / c = xi_scale (1 + s)/(1 - s)``. With
        ``xi_tol`` set the order is doubled until two successive orders agree
        to ``xi_tol``; the lower of the two is kept.
    node_tol : float
        Zero-temperature nodes beyond ``u = xi_scale`` are skipped once a
        node contributes less than ``node_tol`` of the running integral.
    step_rel, step_min : float
        Finite-difference step ``h = max(step_rel L, step_min)``.
    stencil_check : bool
        Also evaluate the stencil at ``h/2`` and raise :class:`StencilError`
        if the results disagree by more than ``stencil_tol_force`` and
        ``stencil_tol_gradient`` (relative).
    solver : SolverConfig
        Determinant solver settings.
    """

    eta: float = DEFAULT_ETA
    ell_floor: int = ELL_FLOOR
    element_tol: float = ELEMENT_TOL
    m_tol: float = 1e-9
    n_tol: float = 1e-9
    n_min: int = 10
    n_cap: int = 20000
    xi_order: int = 24
    xi_scale: float = 2.0
    xi_tol: Optional[float] = 1e-8
    node_tol: float = 1e-14
    step_rel: float = 1e-3
    step_min: float = 0.05e-9
    stencil_check: bool = True
    stencil_tol_force: float = 1e-6
    stencil_tol_gradient: float = 1e-4
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        for name in ("element_tol", "m_tol", "n_tol", "node_tol", "step_rel"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if self.xi_tol is not None and not 0 < self.xi_tol < 1:
            raise ValueError("xi_tol must lie in (0, 1) or be None")
        if self.xi_order < 2 or self.n_min < 1 or self.n_cap < self.n_min:
            raise ValueError("xi_order >= 2 and 1 <= n_min <= n_cap required")
        if not self.xi_scale > 0 or not self.step_min > 0:
            raise ValueError("xi_scale and step_min must be positive")


@dataclass(frozen=True)
class MatsubaraTerm:
    n: int
    xi: float
    contribution: float  #: J
    m_blocks: int
    order: int


@dataclass(frozen=True)
class ZeroFrequency:
    """Dimensionless ``n = 0`` log-det sums, by polarisation."""

    tm: float
    te: float
    prescription: Prescription
    m_tm: int = 0
    m_te: int = 0

    @property
    def total(self) -> float:
        return self.tm + self.te


@dataclass(frozen=True)
class MatsubaraLedger:
    """Bookkeeping of one free-energy evaluation.

    For ``T > 0`` the terms are Matsubara frequencies ``n >= 1`` and
    ``zero_tm``/``zero_te`` hold the energy of the ``n = 0`` term (weight
    ``1/2`` included). For ``T = 0`` (``temperature == 0``) the terms are the
    frequency quadrature nodes, numbered from 1, and the zero-frequency
    fields are zero.
    """

    temperature: float
    terms: tuple
    n_max: int
    tail: float  #: J
    zero_tm: float  #: J
    zero_te: float  #: J
    prescription: Optional[Prescription]
    total: float  #: J

    @property
    def m_max(self) -> int:
        return max((t.m_blocks for t in self.terms), default=0)


@dataclass(frozen=True)
class Discretization:
    """Everything a frozen re-evaluation needs to reproduce the truncations."""

    lmax: int
    orders: tuple
    m_counts: tuple
    m_static: tuple = (0, 0)
    xi_order: int = 0


@dataclass(frozen=True)
class Diagnostics:
    lmax: int
    n_max: int
    m_max: int
    order_min: int
    order_max: int
    step: float
    #: relative change of F and F' between steps h and h/2 (NaN if not checked)
    stencil_force: float
    stencil_gradient: float
    #: relative difference of three-point estimates with steps h and 2h
    three_point_spread: float
    methods: dict
    blocks: int
    energies: int
    wall_time: float


@dataclass(frozen=True)
class InteractionResult:
    free_energy: float  #: J
    force: float  #: N
    force_gradient: float  #: N/m
    diagnostics: Diagnostics
    ledger: MatsubaraLedger


def matsubara_frequency(n: int, T: float) -> float:
    """``xi_n = 2 pi n k_B T / hbar`` in rad/s."""
    return 2.0 * math.pi * n * k_B * T / hbar


def natural_prescription(model: MaterialModel) -> Prescription:
    """``n = 0`` treatment a model implies by itself."""
    if isinstance(model, PerfectReflector):
        return Prescription.PR
    if isinstance(model, Plasma):
        return Prescription.PLASMA
    return Prescription.DRUDE


def _check_pairing(model: MaterialModel, prescription: Prescription):
    pr_model = isinstance(model, PerfectReflector)
    if pr_model != (prescription is Prescription.PR):
        raise ValueError(
            f"prescription {prescription.value!r} does not fit model {model.name!r}: "
            "the perfect-reflector prescription goes with the perfect-reflector model only"
        )


# ---------------------------------------------------------------------------
# one frequency
# ---------------------------------------------------------------------------


class _Tally:
    def __init__(self):
        self.methods = Counter()
        self.blocks = 0

    def add(self, method: str):
        self.methods[method] += 1
        self.blocks += 1


def _block_logdet(spec: BlockSpec, solver: SolverConfig, tally: _Tally) -> float:
    res = logdet(block_as_kernel(spec), config=solver)
    tally.add(res.method)
    if res.value > 0:
        raise NonPhysicalMatrixError(f"ln det(1 - M) = {res.value:.3e} > 0 at m={spec.m}, xi={spec.xi:.6e}")
    return res.value


def _term(xi, geom, model, lmax, acc: Accuracy, tally: _Tally, order=None, m_count=None):
    """``Theta(xi)`` with its truncation data ``(value, m_count, order)``."""
    if order is None:
        start = BlockSpec(0, xi, geom, model, lmax, QuadratureRule.for_lmax(lmax).order)
        # the m = 0 block has the widest integrands; its order serves all m
        order = refine_order(start, tol=acc.element_tol).order
    total = 0.0
    m = 0
    while True:
        v = _block_logdet(BlockSpec(m, xi, geom, model, lmax, order), acc.solver, tally)
        contrib = v if m == 0 else 2.0 * v
        total += contrib
        m += 1
        if m_count is not None:
            if m >= m_count:
                break
        elif m > lmax or (m > 1 and abs(contrib) <= acc.m_tol * abs(total)):
            break
    return total, m, order


def term(xi: float, geom: Geometry, model: MaterialModel, lmax: int | None = None, accuracy: Accuracy = Accuracy()) -> float:
    """``sum_m w_m ln det(1 - M^(m)(xi))`` at one imaginary frequency ``xi > 0``."""
    lmax = lmax or choose_ell_max(geom, accuracy.eta, accuracy.ell_floor)
    return _term(xi, geom, model, lmax, accuracy, _Tally())[0]


# ---------------------------------------------------------------------------
# zero frequency
# ---------------------------------------------------------------------------


def _static_sum(geom, lmax, polarization, omega_p, solver, m_tol, tally, m_count=None):
    total = 0.0
    m = 0
    while m <= lmax:
        res = logdet(static_kernel(geom, m, lmax, polarization, omega_p), config=solver)
        tally.add(res.method)
        if res.value > 0:
            raise NonPhysicalMatrixError(f"static {polarization} block m={m}: ln det = {res.value:.3e} > 0")
        contrib = res.value if m == 0 else 2.0 * res.value
        total += contrib
        m += 1
        if m_count is not None:
            if m >= m_count:
                break
        elif m > 1 and abs(contrib) <= m_tol * abs(total):
            break
    return total, m


def zero_freq_tm(aspect: float, lmax: int, config: SolverConfig | None = None, m_tol: float = 1e-9) -> float:
    """TM log-det sum at ``xi = 0``; both bodies reflect perfectly, so only ``R/L`` matters."""
    if not aspect > 0:
        raise ValueError("aspect ratio must be positive")
    geom = Geometry(float(aspect), 1.0)
    return _static_sum(geom, lmax, "TM", None, config or SolverConfig(), m_tol, _Tally())[0]


def zero_freq_te_plasma(geom: Geometry, omega_p: float, lmax: int, config: SolverConfig | None = None, m_tol: float = 1e-9) -> float:
    """TE log-det sum at ``xi = 0`` for plasma-model bodies with plasma frequency ``omega_p``."""
    if not omega_p > 0:
        raise ValueError("omega_p must be positive")
    return _static_sum(geom, lmax, "TE", omega_p, config or SolverConfig(), m_tol, _Tally())[0]


def _resolve_omega_p(model, omega_p):
    if omega_p is not None:
        return omega_p
    wp = getattr(model, "omega_p", None)
    if wp is None:
        raise ValueError("the plasma prescription needs a plasma frequency")
    return wp


def _zero_frequency(prescription, geom, model, lmax, acc, tally, omega_p=None, frozen=(None, None)):
    tm, m_tm = _static_sum(geom, lmax, "TM", None, acc.solver, acc.m_tol, tally, frozen[0])
    te, m_te = 0.0, 0
    if prescription is Prescription.PLASMA:
        wp = _resolve_omega_p(model, omega_p)
        te, m_te = _static_sum(geom, lmax, "TE", wp, acc.solver, acc.m_tol, tally, frozen[1])
    elif prescription is Prescription.PR:
        te, m_te = _static_sum(geom, lmax, "TE", None, acc.solver, acc.m_tol, tally, frozen[1])
    return ZeroFrequency(tm, te, prescription, m_tm, m_te)


def zero_freq_term(
    prescription,
    geom: Geometry,
    model: MaterialModel | None = None,
    lmax: int | None = None,
    accuracy: Accuracy = Accuracy(),
    omega_p: float | None = None,
) -> ZeroFrequency:
    """``n = 0`` log-det sums for a prescription.

    Drude: TM only (the TE term vanishes). Plasma: TM plus the plasma TE
    term with ``omega_p`` (taken from ``model`` unless given). Perfect
    reflector: TM plus the ideal TE term.
    """
    prescription = Prescription(prescription)
    lmax = lmax or choose_ell_max(geom, accuracy.eta, accuracy.ell_floor)
    return _zero_frequency(prescription, geom, model, lmax, accuracy, _Tally(), omega_p)


# ---------------------------------------------------------------------------
# free energies
# ---------------------------------------------------------------------------


def _geometric_tail(values) -> float:
    if len(values) < 3:
        return 0.0
    a, b, d = values[-3:]
    if a == 0 or b == 0:
        return 0.0
    q = math.sqrt(abs(b / a) * abs(d / b))
    if not q < 1:
        return math.inf
    return d * q / (1.0 - q)


def _free_energy(geom, model, T, prescription, acc, frozen, tally, omega_p=None):
    lmax = frozen.lmax if frozen else choose_ell_max(geom, acc.eta, acc.ell_floor)
    zf = _zero_frequency(prescription, geom, model, lmax, acc, tally, omega_p, frozen.m_static if frozen else (None, None))
    running = 0.5 * zf.total
    values, terms, orders, mcounts = [], [], [], []
    kT = k_B * T
    n = 0
    tail = 0.0
    while True:
        n += 1
        xi = matsubara_frequency(n, T)
        if frozen:
            v, mc, order = _term(xi, geom, model, lmax, acc, tally, frozen.orders[n - 1], frozen.m_counts[n - 1])
        else:
            v, mc, order = _term(xi, geom, model, lmax, acc, tally)
        running += v
        values.append(v)
        orders.append(order)
        mcounts.append(mc)
        terms.append(MatsubaraTerm(n, xi, kT * v, mc, order))
        if frozen:
            if n == len(frozen.orders):
                tail = _geometric_tail(values)
                break
            continue
        if n >= acc.n_min and abs(v) <= acc.n_tol * abs(running):
            tail = _geometric_tail(values)
            if abs(tail) <= acc.n_tol * abs(running):
                break
        if n >= acc.n_cap:
            raise ConvergenceError(f"Matsubara sum not converged after {n} terms (last term {v:.3e})")
    if not math.isfinite(tail):
        tail = 0.0
    total = kT * (running + tail)
    ledger = MatsubaraLedger(
        T, tuple(terms), n, kT * tail, 0.5 * kT * zf.tm, 0.5 * kT * zf.te, prescription, total
    )
    disc = Discretization(lmax, tuple(orders), tuple(mcounts), (zf.m_tm, zf.m_te))
    return total, ledger, disc


def _xi_rule(order: int, scale: float):
    s, w = leggauss(order)
    u = scale * (1.0 + s) / (1.0 - s)
    wu = w * 2.0 * scale / (1.0 - s) ** 2
    return u, wu


def _free_energy_T0_fixed(geom, model, acc, order, frozen, tally):
    lmax = frozen.lmax if frozen else choose_ell_max(geom, acc.eta, acc.ell_floor)
    u, wu = _xi_rule(order, acc.xi_scale)
    pref = hbar * c / (4.0 * math.pi * geom.L)
    running = 0.0
    terms, orders, mcounts = [], [], []
    nodes = len(frozen.orders) if frozen else order
    for j in range(nodes):
        xi = c * u[j] / (2.0 * geom.L)
        if frozen:
            v, mc, o = _term(xi, geom, model, lmax, acc, tally, frozen.orders[j], frozen.m_counts[j])
        else:
            v, mc, o = _term(xi, geom, model, lmax, acc, tally)
        contrib = wu[j] * v
        running += contrib
        orders.append(o)
        mcounts.append(mc)
        terms.append(MatsubaraTerm(j + 1, xi, pref * contrib, mc, o))
        if not frozen and u[j] > acc.xi_scale and abs(contrib) <= acc.node_tol * abs(running):
            break
    total = pref * running
    ledger = MatsubaraLedger(0.0, tuple(terms), len(terms), 0.0, 0.0, 0.0, None, total)
    disc = Discretization(lmax, tuple(orders), tuple(mcounts), (0, 0), order)
    return total, ledger, disc


def _free_energy_T0(geom, model, acc, frozen, tally):
    if frozen:
        return _free_energy_T0_fixed(geom, model, acc, frozen.xi_order, frozen, tally)
    order = acc.xi_order
    cur = _free_energy_T0_fixed(geom, model, acc, order, None, tally)
    if acc.xi_tol is None:
        return cur
    for _ in range(4):
        nxt = _free_energy_T0_fixed(geom, model, acc, 2 * order, None, tally)
        if abs(nxt[0] - cur[0]) <= acc.xi_tol * abs(nxt[0]):
            return cur
        cur, order = nxt, 2 * order
    raise ConvergenceError(f"frequency integral not converged at {order} nodes")


def free_energy(
    geom: Geometry,
    model: MaterialModel,
    T: float,
    prescription=None,
    accuracy: Accuracy = Accuracy(),
    omega_p: float | None = None,
):
    """Free energy at ``T > 0`` from the Matsubara sum.

    Parameters
    ----------
    prescription : Prescription or str, optional
        ``n = 0`` treatment; defaults to :func:`natural_prescription`.
    omega_p : float, optional
        Plasma frequency for the plasma ``n = 0`` TE term when the model
        does not carry one.

    Returns
    -------
    value : float
        Free energy in J.
    ledger : MatsubaraLedger
    """
    if not T > 0:
        raise ValueError("free_energy needs T > 0; use free_energy_T0 at zero temperature")
    prescription = Prescription(prescription) if prescription is not None else natural_prescription(model)
    _check_pairing(model, prescription)
    value, ledger, _ = _free_energy(geom, model, T, prescription, accuracy, None, _Tally(), omega_p)
    return value, ledger


def free_energy_T0(geom: Geometry, model: MaterialModel, accuracy: Accuracy = Accuracy(), return_ledger: bool = False):
    r"""Zero-temperature free energy :math:`\frac{\hbar}{2\pi}\int_0^\infty d\xi\,\Theta(\xi)` in J."""
    value, ledger, _ = _free_energy_T0(geom, model, accuracy, None, _Tally())
    return (value, ledger) if return_ledger else value


# ---------------------------------------------------------------------------
# derivatives
# ---------------------------------------------------------------------------


def stencil_step(L: float, accuracy: Accuracy = Accuracy()) -> float:
    return max(accuracy.step_rel * L, accuracy.step_min)


def _five_point(e, h):
    # e = energies at -2h, -h, 0, h, 2h; returns (F, F') = (-E', -E'')
    d1 = (e[0] - 8.0 * e[1] + 8.0 * e[3] - e[4]) / (12.0 * h)
    d2 = (-e[0] + 16.0 * e[1] - 30.0 * e[2] + 16.0 * e[3] - e[4]) / (12.0 * h * h)
    return -d1, -d2


def _rel(a, b):
    return abs(a - b) / abs(b) if b != 0 else abs(a - b)


def force_and_gradient(
    geom: Geometry,
    model: MaterialModel,
    T: float | None,
    prescription=None,
    accuracy: Accuracy = Accuracy(),
    omega_p: float | None = None,
) -> InteractionResult:
    """Free energy, force ``F = -dF/dL`` and gradient ``F' = -d^2F/dL^2``.

    ``T=None`` or ``T=0`` selects the zero-temperature integral. The
    discretisation is fixed at the central distance and reused at
    ``L +- h``, ``L +- 2h`` (and ``L +- h/2`` when ``accuracy.stencil_check``).

    Raises
    ------
    StencilError
        If the ``h`` and ``h/2`` stencils disagree beyond tolerance.
    """
    t0 = time.perf_counter()
    zero_t = T is None or T == 0
    if not zero_t and not T > 0:
        raise ValueError("temperature must be positive (or None/0 for T = 0)")
    if not zero_t:
        prescription = Prescription(prescription) if prescription is not None else natural_prescription(model)
        _check_pairing(model, prescription)
    tally = _Tally()

    def energy(L, frozen):
        g = geom.with_distance(L)
        if zero_t:
            return _free_energy_T0(g, model, accuracy, frozen, tally)
        return _free_energy(g, model, T, prescription, accuracy, frozen, tally, omega_p)

    L = geom.L
    h = stencil_step(L, accuracy)
    if h >= 0.5 * L:
        raise ValueError(f"step {h:.3e} m too large for L = {L:.3e} m")
    e0, ledger, disc = energy(L, None)
    e = {0: e0}
    for k in (-2, -1, 1, 2):
        e[k] = energy(L + k * h, disc)[0]
    F, Fp = _five_point([e[-2], e[-1], e[0], e[1], e[2]], h)
    spread = _rel(-(e[1] - e[-1]) / (2 * h), -(e[2] - e[-2]) / (4 * h))
    sf = sg = math.nan
    if accuracy.stencil_check:
        for k in (-0.5, 0.5):
            e[k] = energy(L + k * h, disc)[0]
        F2, Fp2 = _five_point([e[-1], e[-0.5], e[0], e[0.5], e[1]], 0.5 * h)
        sf, sg = _rel(F2, F), _rel(Fp2, Fp)
        if sf > accuracy.stencil_tol_force or sg > accuracy.stencil_tol_gradient:
            raise StencilError(
                f"stencils with h={h:.3e} m and h/2 disagree: force {sf:.2e}, gradient {sg:.2e}; "
                "tighten the energy tolerances (m_tol, n_tol, element_tol, eta)"
            )
    diag = Diagnostics(
        lmax=disc.lmax,
        n_max=ledger.n_max,
        m_max=max(max(disc.m_counts, default=0), *disc.m_static),
        order_min=min(disc.orders, default=0),
        order_max=max(disc.orders, default=0),
        step=h,
        stencil_force=sf,
        stencil_gradient=sg,
        three_point_spread=spread,
        methods=dict(sorted(tally.methods.items())),
        blocks=tally.blocks,
        energies=len(e),
        wall_time=time.perf_counter() - t0,
    )
    return InteractionResult(e0, F, Fp, diag, ledger)
