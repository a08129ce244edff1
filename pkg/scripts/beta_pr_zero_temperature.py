"""Beyond-PFA coefficients of perfect reflectors at zero temperature.

Computes ``beta`` and ``beta'`` estimates for a sequence of aspect ratios and
extrapolates linearly in ``L/R`` (the setting of acceptance criteria A1/A2).

    python3 scripts/beta_pr_zero_temperature.py --aspect 50 100 200 --eta 7 --nodes 12
"""
import argparse
import math

from sphereplane import Accuracy, Geometry, PerfectReflector, beta_estimates, extrapolate_beta


def main():
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("--aspect", type=float, nargs="+", default=[50.0, 100.0, 200.0])
    p.add_argument("--eta", type=float, default=7.0)
    p.add_argument("--nodes", type=int, default=12)
    a = p.parse_args()
    acc = Accuracy(eta=a.eta, xi_order=a.nodes, xi_tol=None, stencil_check=False)
    L = 1e-6
    est = []
    for asp in a.aspect:
        e = beta_estimates(Geometry(asp * L, L), None, PerfectReflector(), accuracy=acc)
        d = e.result.diagnostics
        print(f"R/L={asp:g}  beta={e.beta_like:.5f}  beta'={e.beta_prime_like:.5f}  lmax={d.lmax}  {d.wall_time:.0f} s", flush=True)
        est.append(e)
    if len(est) >= 2:
        b = extrapolate_beta(est, "beta_like")
        bp = extrapolate_beta(est, "beta_prime_like")
        exact = 1 / 6 - 10 / math.pi**2
        print(f"extrapolated beta  = {b.intercept:.4f} (exact {exact:.4f}), rms {b.rms:.1e}")
        print(f"extrapolated beta' = {bp.intercept:.4f} (exact {2 * exact / 3:.4f}), ratio {bp.intercept / b.intercept:.4f}")


if __name__ == "__main__":
    main()
