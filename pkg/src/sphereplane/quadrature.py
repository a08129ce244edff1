"""Gauss-Laguerre rules with log-weights.

For orders of a few thousand the smallest weights are far below the double
precision range, while the integrands they multiply are far above it, so the
weights are only ever handled as logarithms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import eigh_tridiagonal

__all__ = ["QuadratureRule", "gauss_laguerre"]


def _laguerre_pair(n: int, t: np.ndarray):
    """Scaled (L_n, L_{n-1}) at t with a common log-scale per node."""
    p0 = np.ones_like(t)
    p1 = 1.0 - t
    scale = np.zeros_like(t)
    if n == 0:
        return p0, np.zeros_like(t), scale
    for k in range(1, n):
        p0, p1 = p1, ((2 * k + 1 - t) * p1 - k * p0) / (k + 1)
        big = np.maximum(np.abs(p0), np.abs(p1))
        over = big > 1e200
        if np.any(over):
            p0 = np.where(over, p0 / big, p0)
            p1 = np.where(over, p1 / big, p1)
            scale = np.where(over, scale + np.log(big), scale)
    return p1, p0, scale


@lru_cache(maxsize=32)
def _rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    k = np.arange(n, dtype=float)
    diag = 2.0 * k + 1.0
    off = np.arange(1, n, dtype=float)
    t, vecs = eigh_tridiagonal(diag, off)
    for _ in range(3):
        ln, lnm1, _ = _laguerre_pair(n, t)
        t = t - t * ln / (n * (ln - lnm1))
    # w_i = t_i / ((n+1)^2 L_{n+1}(t_i)^2) and L_{n+1}(t_i) = -n L_{n-1}(t_i)/(n+1) at a root
    _, lnm1, scale = _laguerre_pair(n, t)
    ln_w = np.log(t) - 2.0 * (math.log(n) + np.log(np.abs(lnm1)) + scale)
    # Golub-Welsch weights are more accurate wherever they are representable
    w_gw = vecs[0] ** 2
    ok = w_gw > 1e-250
    ln_w[ok] = np.log(w_gw[ok])
    t.setflags(write=False)
    ln_w.setflags(write=False)
    return t, ln_w


def gauss_laguerre(n: int) -> tuple[np.ndarray, np.ndarray]:
    r"""Nodes and log-weights for :math:`\int_0^\infty e^{-t} f(t)\,dt`."""
    if n < 1:
        raise ValueError(f"order must be positive, got {n}")
    return _rule(int(n))


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Laguerre rule in the shifted momentum variable.

    The transverse-momentum integral is written with
    ``t = 2 kappa (L + R) - 2 xi (L + R) / c >= 0``; the rule integrates
    ``exp(-t) f(t)``.
    """

    order: int

    def __post_init__(self):
        if self.order < 1:
            raise ValueError(f"quadrature order must be positive, got {self.order}")

    @property
    def nodes(self) -> np.ndarray:
        return gauss_laguerre(self.order)[0]

    @property
    def ln_weights(self) -> np.ndarray:
        return gauss_laguerre(self.order)[1]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.ln_weights)

    def doubled(self) -> "QuadratureRule":
        return QuadratureRule(2 * self.order)

    @classmethod
    def for_lmax(cls, lmax: int) -> "QuadratureRule":
        return cls(max(50, lmax // 2))
