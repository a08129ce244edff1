"""Convergence of the HODLR log-determinant in the ACA tolerance and leaf size.

Prints, for a finite-frequency gold block and a static TM block, the relative
error against the dense path, the fraction of entries read, the mean ACA rank
and the wall time for a grid of ``aca_tol`` and ``leaf_size``.

    python3 scripts/hodlr_convergence.py
"""
import time

from scipy.constants import c

from sphereplane.hodlr import SolverConfig, logdet_dense, logdet_hodlr
from sphereplane.materials import default_gold
from sphereplane.scattering import BlockSpec, Geometry, block_as_kernel, refine_order, static_kernel

TOLS = (1e-6, 1e-8, 1e-10, 1e-12)
LEAVES = (32, 64, 128)


def blocks():
    g = Geometry(1000e-6, 1e-6)
    lmax = 1000
    spec = refine_order(BlockSpec(1, c / (2 * g.L), g, default_gold(), lmax, lmax // 2))
    yield "gold, R/L=1000, u=1, m=1", lambda: block_as_kernel(spec)
    yield "static TM, R/L=1000, m=0", lambda: static_kernel(g, 0, 2000, "TM")


def main():
    print(f"{'block':<28} {'n':>5} {'aca_tol':>8} {'leaf':>5} {'rel err':>9} {'read':>7} {'rank':>6} {'time/s':>7}")
    for name, make in blocks():
        k = make()
        ref = logdet_dense(k).value
        for tol in TOLS:
            for leaf in LEAVES:
                k = make()
                t = time.perf_counter()
                r = logdet_hodlr(k, cfg=SolverConfig(aca_tol=tol, leaf_size=leaf))
                dt = time.perf_counter() - t
                err = abs(r.value - ref) / abs(ref)
                print(f"{name:<28} {k.n:>5} {tol:>8.0e} {leaf:>5} {err:>9.1e} {r.entries_read / k.n**2:>7.1%} "
                      f"{r.ranks.mean:>6.1f} {dt:>7.2f}")


if __name__ == "__main__":
    main()
