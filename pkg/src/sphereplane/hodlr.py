r"""Log-determinants :math:`\ln\det(1 - M)` from an element generator.

Three paths:

* :func:`logdet_dense` materialises ``1 - M`` and takes a Cholesky
  factorisation (a symmetric pivoted ``LDL^T`` diagnoses failures). If the
  generator exposes a Gram factor ``M = U^T U`` with fewer rows than columns,
  Sylvester's identity :math:`\det(1 - U^TU) = \det(1 - UU^T)` is used on
  the smaller side; the result is the same up to rounding.
* :func:`logdet_lowrank` needs the Gram factor. A randomised range finder
  grows an orthonormal basis ``Q`` block by block until the discarded part
  ``E = U^T (1 - QQ^T) U`` has a trace small enough to certify the result
  (see the function). The numerical rank of physical round trips is far
  below their dimension, which makes this the fastest path for large blocks
  that come with a factor.
* :func:`logdet_hodlr` builds a hierarchical off-diagonal low-rank (HODLR)
  representation on a dyadic split of the index range, compresses every
  off-diagonal block by partially pivoted adaptive cross approximation (ACA)
  and accumulates the determinant through a Woodbury chain, level by level.

Only entries requested from the generator are ever computed, which is what
makes the hierarchical path cheaper than the dense one at large ``n``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import blas, cho_factor, cho_solve, ldl, lu_factor, lu_solve

__all__ = [
    "SolverConfig",
    "LogDetResult",
    "RankSummary",
    "HodlrTree",
    "NonPhysicalMatrixError",
    "aca",
    "logdet_dense",
    "logdet_hodlr",
    "logdet_lowrank",
    "logdet",
    "build_hodlr",
]

_EPS = np.finfo(float).eps


class NonPhysicalMatrixError(ArithmeticError):
    """``det(1 - M) <= 0``: the input is not a physical round trip (or is under-resolved)."""


@dataclass(frozen=True)
class SolverConfig:
    """Knobs of the determinant solver.

    Attributes
    ----------
    dense_threshold : int
        Dimension up to which the dense path is used.
    aca_tol : float
        Relative ACA stopping tolerance, ``0 < aca_tol < 1e-3``.
    leaf_size : int
        Diagonal blocks at most this large are factorised densely (``>= 16``).
    max_rank : int
        ACA rank cap per block; beyond it the block is compressed densely.
    lowrank : bool
        Above ``dense_threshold``, use :func:`logdet_lowrank` instead of the
        HODLR path whenever the generator exposes a Gram factor.
    lowrank_tol : float
        Relative certificate required by :func:`logdet_lowrank`.
    """

    dense_threshold: int = 1024
    aca_tol: float = 1e-10
    leaf_size: int = 64
    max_rank: int = 256
    lowrank: bool = True
    lowrank_tol: float = 1e-12

    def __post_init__(self):
        if self.dense_threshold < 0:
            raise ValueError("dense_threshold must be non-negative")
        if not 0 < self.aca_tol < 1e-3:
            raise ValueError(f"aca_tol must lie in (0, 1e-3), got {self.aca_tol}")
        if self.leaf_size < 16:
            raise ValueError(f"leaf_size must be >= 16, got {self.leaf_size}")
        if self.max_rank < 1:
            raise ValueError("max_rank must be positive")
        if not 0 < self.lowrank_tol < 1e-3:
            raise ValueError(f"lowrank_tol must lie in (0, 1e-3), got {self.lowrank_tol}")


@dataclass(frozen=True)
class RankSummary:
    count: int = 0
    min: int = 0
    max: int = 0
    mean: float = 0.0
    dense_fallbacks: int = 0

    @classmethod
    def from_ranks(cls, ranks, fallbacks: int = 0) -> "RankSummary":
        if not ranks:
            return cls(dense_fallbacks=fallbacks)
        r = np.asarray(ranks)
        return cls(int(r.size), int(r.min()), int(r.max()), float(r.mean()), fallbacks)


@dataclass(frozen=True)
class LogDetResult:
    value: float
    method: str
    estimated_error: float
    ranks: RankSummary = field(default_factory=RankSummary)
    entries_read: int = 0


# ---------------------------------------------------------------------------
# dense
# ---------------------------------------------------------------------------


def _chol_logdet(A: np.ndarray, lower: bool = True) -> float:
    try:
        cf, _ = cho_factor(A, lower=lower, check_finite=False)
    except np.linalg.LinAlgError:
        # Bunch-Kaufman LDL^T tells us why: some pivot is <= 0
        _, d, _ = ldl(A, lower=lower)
        ev = np.linalg.eigvalsh(d)
        raise NonPhysicalMatrixError(
            f"1 - M is not positive definite (smallest pivot eigenvalue {ev.min():.3e})"
        ) from None
    return 2.0 * float(np.sum(np.log(np.diag(cf))))


# Below this trace the Cholesky pivots 1 - delta lose the digits of delta, and
# ln det(1 - G) is summed as -sum_k tr(G^k)/k instead
_SERIES_TRACE = 1e-3


def _logdet_series(G: np.ndarray) -> float:
    """``ln det(1 - G)`` for symmetric PSD ``G`` with ``tr G < _SERIES_TRACE``.

    ``||G||_2 <= tr G = rho``, so stopping at the first ``K`` with
    ``rho^K < eps`` leaves a relative error below ``eps``. Powers beyond the
    third are reached through Frobenius products.
    """
    rho = float(np.trace(G))
    if rho == 0.0:
        return 0.0
    # tr(G^k) for k = 1..6 from G, G^2 = G G, G^3 = G^2 G
    terms = [rho, float(np.vdot(G, G))]
    need = 1
    while rho**need >= _EPS * 0.5 and need < 6:
        need += 1
    if need >= 3:
        G2 = G @ G
        terms.append(float(np.vdot(G2, G)))
        if need >= 4:
            terms.append(float(np.vdot(G2, G2)))
        if need >= 5:
            G3 = G2 @ G
            terms.append(float(np.vdot(G2, G3)))
            if need >= 6:
                terms.append(float(np.vdot(G3, G3)))
    return -sum(t / (k + 1) for k, t in enumerate(terms[:need]))


def _logdet_capacitance(X: np.ndarray) -> float:
    """``ln det(1 - X)`` for a small non-symmetric ``X`` from its eigenvalues.

    ``ln|1 - lam| = log1p(-2 Re lam + |lam|^2) / 2`` keeps full relative
    accuracy when ``X`` is tiny.
    """
    lam = np.linalg.eigvals(X)
    if np.any((lam.imag == 0) & (lam.real >= 1.0)):
        raise NonPhysicalMatrixError("Woodbury capacitance has non-positive determinant")
    a, b = lam.real, lam.imag
    return 0.5 * float(np.sum(np.log1p(-2.0 * a + a * a + b * b)))


def logdet_dense(kernel, n: int | None = None) -> LogDetResult:
    """Dense ``ln det(1 - M)``.

    Parameters
    ----------
    kernel : BlockKernel
        Element generator of ``M``.
    n : int, optional
        Dimension; defaults to ``kernel.n``.

    Raises
    ------
    NonPhysicalMatrixError
        If ``1 - M`` is not positive definite.
    """
    n = kernel.n if n is None else int(n)
    if n < 1:
        raise ValueError("dimension must be positive")
    U = kernel.factor() if hasattr(kernel, "factor") else None
    if U is not None:
        # Sylvester on the smaller side; syrk fills the upper triangle only,
        # which is all cho_factor reads
        U = np.asfortranarray(U)
        G = blas.dsyrk(1.0, U, trans=0 if U.shape[0] < n else 1)
        if np.trace(G) < _SERIES_TRACE:
            value = _logdet_series(np.triu(G) + np.triu(G, 1).T)
        else:
            A = -G
            A[np.diag_indices(A.shape[0])] += 1.0
            value = _chol_logdet(A, lower=False)
        read = n * n  # every element enters the product
    else:
        before = kernel.entries_read
        idx = np.arange(n)
        G = kernel.block(idx, idx)
        if np.trace(G) < _SERIES_TRACE:
            value = _logdet_series(G)
        else:
            A = -G
            A[np.diag_indices(n)] += 1.0
            value = _chol_logdet(A)
        read = kernel.entries_read - before
    err = G.shape[0] * _EPS * max(1.0, abs(value))
    return LogDetResult(value, "dense", err, RankSummary(), read)


# ---------------------------------------------------------------------------
# ACA
# ---------------------------------------------------------------------------


def _probe_rows(m: int) -> np.ndarray:
    # evenly spaced anchors and their right neighbours, so that both members
    # of an interleaved (l, polarisation) pair are looked at
    anchors = np.unique(np.linspace(0, m - 1, 6).astype(int))
    return np.unique(np.concatenate([anchors, np.minimum(anchors + 1, m - 1)]))


def aca(get_rows, get_cols, m: int, n: int, tol: float, max_rank: int):
    """Partially pivoted adaptive cross approximation ``B ~ P @ Q.T``.

    Parameters
    ----------
    get_rows : callable
        ``get_rows(i)`` returns row ``i`` of the ``m x n`` block.
    get_cols : callable
        ``get_cols(j)`` returns column ``j``.
    tol : float
        Stop once the newest cross ``|p_k| |q_k|`` falls below ``tol`` times
        the running Frobenius-norm estimate of the approximation, and a fixed
        set of probe rows has residual norm below the same bound.
    max_rank : int

    Returns
    -------
    P, Q : ndarray, shapes ``(m, r)`` and ``(n, r)``
    converged : bool
        False if ``max_rank`` was hit first.

    Notes
    -----
    Pivots are chosen deterministically: row 0 first, then the largest
    entry of the newest column among unused rows. Plain partial pivoting can
    stop early on blocks that split into pieces with disjoint row support
    (at ``m = 0`` the two polarisations do not couple), because it never
    visits rows of the other piece. The probe rows catch that case; the
    worst probe row then becomes the next pivot.
    """
    kmax = min(max_rank, m, n)
    P = np.zeros((m, kmax))
    Q = np.zeros((n, kmax))
    used_rows = np.zeros(m, dtype=bool)
    probes = _probe_rows(m)
    norm2 = 0.0
    k = 0
    i = 0
    zero_rows = 0

    def next_unused():
        free = np.flatnonzero(~used_rows)
        return int(free[0]) if free.size else -1

    def probe_failure():
        # residual of the probe rows that have not been pivots yet
        cand = probes[~used_rows[probes]]
        worst, worst_norm = -1, tol * math.sqrt(max(norm2, 0.0))
        for r in cand:
            res = get_rows(int(r)) - P[r, :k] @ Q[:, :k].T
            rn = float(np.linalg.norm(res))
            if rn > worst_norm:
                worst, worst_norm = int(r), rn
        return worst

    while k < kmax:
        used_rows[i] = True
        row = get_rows(i) - P[i, :k] @ Q[:, :k].T
        j = int(np.argmax(np.abs(row)))
        piv = row[j]
        if piv == 0.0 or not np.isfinite(piv):
            zero_rows += 1
            i = next_unused()
            if i < 0 or zero_rows > 3:
                i = probe_failure() if i >= 0 else -1
                if i < 0:
                    return P[:, :k], Q[:, :k], True
                zero_rows = 0
            continue
        q = row / piv
        p = get_cols(j) - Q[j, :k] @ P[:, :k].T
        P[:, k] = p
        Q[:, k] = q
        pn2 = float(p @ p)
        qn2 = float(q @ q)
        cross = 2.0 * float((P[:, :k].T @ p) @ (Q[:, :k].T @ q)) if k else 0.0
        norm2 = norm2 + cross + pn2 * qn2
        k += 1
        cand = np.abs(p)
        cand[used_rows] = -1.0
        i = int(np.argmax(cand))
        if math.sqrt(pn2 * qn2) <= tol * math.sqrt(max(norm2, 0.0)) or cand[i] < 0:
            i = probe_failure()
            if i < 0:
                return P[:, :k], Q[:, :k], True
    return P[:, :k], Q[:, :k], False


# ---------------------------------------------------------------------------
# HODLR
# ---------------------------------------------------------------------------


@dataclass
class _Node:
    lo: int
    hi: int
    level: int
    left: "_Node | None" = None
    right: "_Node | None" = None
    # leaf data
    chol: tuple | None = None
    # interior data: A12 = U1 V1^T, A21 = V1 U1^T
    U1: np.ndarray | None = None
    V1: np.ndarray | None = None
    W1: np.ndarray | None = None
    W2: np.ndarray | None = None
    S_lu: tuple | None = None
    logdet: float = 0.0
    rank: int = 0
    fallback: bool = False

    @property
    def size(self) -> int:
        return self.hi - self.lo

    @property
    def is_leaf(self) -> bool:
        return self.left is None


@dataclass
class HodlrTree:
    """Factored HODLR representation of ``1 - M``.

    Attributes
    ----------
    levels : int
        Depth of the dyadic tree (0 for a single dense leaf).
    leaf_size : int
    root : _Node
        Each interior node holds its off-diagonal factor pair ``(U1, V1)``
        with the block ``A12 = U1 V1^T``; leaves hold Cholesky factors.
    """

    levels: int
    leaf_size: int
    root: _Node
    n: int

    def nodes(self):
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            if not node.is_leaf:
                stack.extend((node.right, node.left))

    def ranks(self) -> list[int]:
        return [nd.rank for nd in self.nodes() if not nd.is_leaf]

    def fallbacks(self) -> int:
        return sum(nd.fallback for nd in self.nodes() if not nd.is_leaf)

    def solve(self, B: np.ndarray) -> np.ndarray:
        """``(1 - M)^{-1} B`` using the stored factorisation."""
        return _solve(self.root, np.asarray(B, dtype=float), self.root.lo)

    @property
    def logdet(self) -> float:
        return self.root.logdet


def _split(lo: int, hi: int, leaf: int, level: int) -> _Node:
    node = _Node(lo, hi, level)
    if hi - lo > leaf:
        mid = (lo + hi) // 2
        node.left = _split(lo, mid, leaf, level + 1)
        node.right = _split(mid, hi, leaf, level + 1)
    return node


def _solve(node: _Node, B: np.ndarray, base: int) -> np.ndarray:
    if node.is_leaf:
        return cho_solve(node.chol, B, check_finite=False)
    mid = node.left.hi - node.lo
    y1 = _solve(node.left, B[:mid], base)
    y2 = _solve(node.right, B[mid:], base)
    r = node.rank
    if r == 0:
        return np.concatenate([y1, y2])
    rhs = np.concatenate([node.V1.T @ y2, node.U1.T @ y1])
    s = lu_solve(node.S_lu, rhs, check_finite=False)
    return np.concatenate([y1 - node.W1 @ s[:r], y2 - node.W2 @ s[r:]])


def _factor_node(node: _Node, kernel, cfg: SolverConfig) -> None:
    if node.is_leaf:
        idx = np.arange(node.lo, node.hi)
        G = kernel.block(idx, idx)
        A = -G
        A[np.diag_indices(node.size)] += 1.0
        try:
            node.chol = cho_factor(A, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            raise NonPhysicalMatrixError(
                f"diagonal leaf [{node.lo}, {node.hi}) of 1 - M is not positive definite"
            ) from None
        if np.trace(G) < _SERIES_TRACE:
            node.logdet = _logdet_series(G)
        else:
            node.logdet = 2.0 * float(np.sum(np.log(np.diag(node.chol[0]))))
        return
    _factor_node(node.left, kernel, cfg)
    _factor_node(node.right, kernel, cfg)
    rows = np.arange(node.left.lo, node.left.hi)
    cols = np.arange(node.right.lo, node.right.hi)
    # off-diagonal block of 1 - M is -M[rows, cols]
    P, Q, ok = aca(
        lambda i: kernel.block([rows[i]], cols)[0],
        lambda j: kernel.block(rows, [cols[j]])[:, 0],
        rows.size,
        cols.size,
        cfg.aca_tol,
        cfg.max_rank,
    )
    if not ok:
        # dense compression of this block, truncated at the same tolerance
        B = kernel.block(rows, cols)
        u, s, vt = np.linalg.svd(B, full_matrices=False)
        keep = int(np.sum(s > cfg.aca_tol * s[0])) if s.size and s[0] > 0 else 0
        P = u[:, :keep] * s[:keep]
        Q = vt[:keep].T
        node.fallback = True
    node.U1 = -P
    node.V1 = Q
    r = P.shape[1]
    node.rank = r
    node.logdet = node.left.logdet + node.right.logdet
    if r == 0:
        return
    node.W1 = _solve(node.left, node.U1, node.left.lo)
    node.W2 = _solve(node.right, node.V1, node.right.lo)
    S = np.eye(2 * r)
    S[:r, r:] = node.V1.T @ node.W2
    S[r:, :r] = node.U1.T @ node.W1
    node.S_lu = lu_factor(S, check_finite=False)
    # det S = det(1 - C B) with B = V1^T W2 and C = U1^T W1
    try:
        node.logdet += _logdet_capacitance(S[r:, :r] @ S[:r, r:])
    except NonPhysicalMatrixError:
        raise NonPhysicalMatrixError(
            f"Woodbury capacitance at [{node.lo}, {node.hi}) has non-positive determinant"
        ) from None


def build_hodlr(kernel, cfg: SolverConfig = SolverConfig()) -> HodlrTree:
    """Factorise ``1 - M`` in HODLR form (bottom-up, left subtree first)."""
    n = kernel.n
    root = _split(0, n, cfg.leaf_size, 0)
    _factor_node(root, kernel, cfg)
    levels = 0
    stack = [root]
    while stack:
        nd = stack.pop()
        levels = max(levels, nd.level)
        if not nd.is_leaf:
            stack.extend((nd.left, nd.right))
    return HodlrTree(levels, cfg.leaf_size, root, n)


def logdet_hodlr(kernel, n: int | None = None, aca_tol: float | None = None, cfg: SolverConfig | None = None) -> LogDetResult:
    """Hierarchical ``ln det(1 - M)``.

    Parameters
    ----------
    kernel : BlockKernel
    n : int, optional
        Dimension; defaults to ``kernel.n``.
    aca_tol : float, optional
        Overrides ``cfg.aca_tol``.
    cfg : SolverConfig, optional

    Returns
    -------
    LogDetResult
        ``method == "hodlr"``; ``estimated_error`` is ``aca_tol`` times the
        number of compressed blocks times ``max(1, |value|)``, a heuristic
        first-order bound.
    """
    cfg = cfg or SolverConfig()
    if aca_tol is not None:
        cfg = SolverConfig(cfg.dense_threshold, aca_tol, cfg.leaf_size, cfg.max_rank)
    n = kernel.n if n is None else int(n)
    if n != kernel.n:
        raise ValueError(f"dimension mismatch: n={n}, generator has {kernel.n}")
    before = kernel.entries_read
    tree = build_hodlr(kernel, cfg)
    ranks = tree.ranks()
    value = tree.logdet
    err = cfg.aca_tol * max(1, len(ranks)) * max(1.0, abs(value)) + n * _EPS
    return LogDetResult(
        value, "hodlr", err, RankSummary.from_ranks(ranks, tree.fallbacks()), kernel.entries_read - before
    )


class _Banded:
    """``U`` with the column window of every group of rows.

    Entries below ``1e-18 max|U|`` are treated as zero. They change
    ``ln det(1 - U^T U)`` by at most ``n 1e-18 max|U|^2``, and
    ``|ln det(1 - U^T U)| >= max_i M_ii >= max|U|^2``, so the relative effect is
    below ``1e-15``. Rows of a round-trip factor (quadrature nodes) couple to
    a contiguous range of multipoles, which makes the windows narrow.
    """

    def __init__(self, U: np.ndarray, group: int = 128, cutoff: float = 1e-18):
        self.U = U
        self.shape = U.shape
        k, n = U.shape
        self.frob2 = float(np.einsum("ij,ij->", U, U))
        live = np.abs(U) >= cutoff * (np.abs(U).max() if U.size else 0.0)
        self.windows = []
        for s in range(0, k, group):
            cols = np.flatnonzero(live[s : s + group].any(axis=0))
            if cols.size:
                self.windows.append((s, min(s + group, k), int(cols[0]), int(cols[-1]) + 1))

    def matmul(self, X: np.ndarray) -> np.ndarray:
        """``U @ X`` restricted to the windows."""
        out = np.zeros((self.shape[0], X.shape[1]))
        for r0, r1, c0, c1 in self.windows:
            out[r0:r1] = self.U[r0:r1, c0:c1] @ X[c0:c1]
        return out

    def rmatmul(self, Y: np.ndarray) -> np.ndarray:
        """``Y.T @ U`` restricted to the windows."""
        out = np.zeros((Y.shape[1], self.shape[1]))
        for r0, r1, c0, c1 in self.windows:
            out[:, c0:c1] += Y[r0:r1].T @ self.U[r0:r1, c0:c1]
        return out


def logdet_lowrank(kernel, n: int | None = None, tol: float = 1e-12, block: int = 64, seed: int = 0) -> LogDetResult:
    r"""``ln det(1 - U^T U)`` from a randomised range finder with a trace certificate.

    With an orthonormal ``Q`` the Gram matrix splits exactly as
    ``U^T U = B^T B + E``, ``B = Q^T U`` and ``E = U^T (1 - QQ^T) U >= 0``,
    and ``tr E = ||U||_F^2 - ||B||_F^2``. Then

    .. math::

        \ln\det(1 - U^TU) = \sum_i \ln(1 - \sigma_i^2) - \operatorname{tr} E - \delta,
        \qquad 0 \le \delta \le \operatorname{tr}E\,\frac{\sigma_1^2}{1-\sigma_1^2}
        + O(\operatorname{tr}E^2),

    with :math:`\sigma_i` the singular values of ``B``. ``Q`` grows by
    ``block`` Gaussian probes (fixed ``seed``) until the bound on
    :math:`\delta` is below ``tol * |value|``. If the rank needed exceeds a
    third of the smaller dimension the dense path is cheaper and is used
    instead; the result then reports ``method="dense"``.

    Raises
    ------
    NonPhysicalMatrixError
        If some :math:`\sigma_i \ge 1`.
    """
    U = kernel.factor() if hasattr(kernel, "factor") else None
    if U is None:
        raise TypeError("logdet_lowrank needs a generator with a Gram factor")
    k, ncols = U.shape
    n = ncols if n is None else int(n)
    if n != ncols:
        raise ValueError(f"dimension {n} does not match the factor ({ncols} columns)")
    cap = min(k, n) // 3
    if cap < block:
        return logdet_dense(kernel, n)
    W = _Banded(U)
    rng = np.random.default_rng(seed)
    total = W.frob2
    Q = np.empty((k, 0))
    B = np.empty((0, n))
    captured = 0.0
    while True:
        Y = W.matmul(rng.standard_normal((n, block)))
        for _ in range(2):  # re-orthogonalise once for stability
            if Q.shape[1]:
                Y -= Q @ (Q.T @ Y)
        Qb, _ = np.linalg.qr(Y)
        Bb = W.rmatmul(Qb)
        Q = np.hstack([Q, Qb])
        B = np.vstack([B, Bb])
        captured += float(np.einsum("ij,ij->", Bb, Bb))
        s2 = np.linalg.eigvalsh(B @ B.T)
        if s2[-1] >= 1.0:
            raise NonPhysicalMatrixError(f"round trip has a singular value^2 {s2[-1]:.6g} >= 1")
        tail = max(total - captured, 0.0)
        value = float(np.sum(np.log1p(-np.clip(s2, 0.0, None)))) - tail
        bound = tail * s2[-1] / (1.0 - s2[-1]) + tail * tail
        if bound <= tol * abs(value) or value == 0.0:
            break
        if Q.shape[1] + block > cap:
            return logdet_dense(kernel, n)
    err = bound + n * _EPS * total
    return LogDetResult(value, "lowrank", err, RankSummary.from_ranks([Q.shape[1]]), n * n)


def logdet(kernel, n: int | None = None, config: SolverConfig | None = None) -> LogDetResult:
    """Dispatch on the dimension.

    Dense for ``n <= config.dense_threshold``. Above it the certified
    low-rank path when the generator has a Gram factor and
    ``config.lowrank`` is set, HODLR otherwise.
    """
    config = config or SolverConfig()
    n = kernel.n if n is None else int(n)
    if n <= config.dense_threshold:
        return logdet_dense(kernel, n)
    if config.lowrank and getattr(kernel, "has_factor", False):
        return logdet_lowrank(kernel, n, tol=config.lowrank_tol)
    return logdet_hodlr(kernel, n, cfg=config)
