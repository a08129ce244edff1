"""Command-line sweeps of the sphere-plane interaction.

Each row is one geometry ``(R, L)``. A row computes the free energy, force
and force gradient, the PFA references and the beta-type ratios, and is
written to CSV with 17 significant digits. Rows are emitted in spec order
(outer loop over ``R``, inner over ``L`` ascending), whatever the order in
which workers finish. A failing row becomes an error record and the exit
code is nonzero.

Lengths are given in um (radius) and nm (distance), temperatures in K and
frequencies in eV. Output columns are SI.
"""
from __future__ import annotations

import argparse
import concurrent.futures
import csv
import io
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, fields
from typing import IO, Iterator, Optional, Sequence

import numpy as np
from scipy.constants import c, e, hbar, k as k_B

from . import __version__ as TOOL_VERSION
from .hodlr import SolverConfig
from .materials import (
    DEFAULT_GAMMA_EV,
    DEFAULT_OMEGA_P_EV,
    EV,
    Drude,
    PerfectReflector,
    Plasma,
    Tabulated,
    load_tabulated,
)
from .pfa import PlateAccuracy, beta_estimates
from .scattering import Geometry
from .thermo import Accuracy, Prescription, natural_prescription

__all__ = ["RunSpec", "SweepRow", "PRESETS", "build_model", "run", "emit_csv", "read_csv", "parse_args", "main"]

log = logging.getLogger("sphereplane")

UM = 1e-6
NM = 1e-9


@dataclass(frozen=True)
class RunSpec:
    """A validated sweep.

    Attributes
    ----------
    radii, distances : tuple of float
        Sphere radii and surface distances in m.
    temperature : float or None
        In K; ``None`` selects zero temperature.
    model : str
        ``pr``, ``plasma``, ``drude`` or ``tabulated:<path>``.
    prescription : str or None
        ``n = 0`` treatment; ``None`` means the model's own.
    omega_p_ev, gamma_ev : float
        Plasma frequency and relaxation rate (eV) of the plasma and Drude models.
    eta, aca_tol, dense_threshold, xi_order, element_tol, m_tol, n_tol : numeric knobs
        See :class:`~sphereplane.thermo.Accuracy` and
        :class:`~sphereplane.hodlr.SolverConfig`.
    stencil_check : bool
        Also evaluate the ``h/2`` stencil and fail rows that disagree.
    jobs : int
        Worker processes.
    output : str or None
        CSV path; ``None`` writes to standard output.
    """

    radii: tuple
    distances: tuple
    temperature: Optional[float] = 295.0
    model: str = "drude"
    prescription: Optional[str] = None
    omega_p_ev: float = DEFAULT_OMEGA_P_EV
    gamma_ev: float = DEFAULT_GAMMA_EV
    eta: float = Accuracy.eta
    aca_tol: float = SolverConfig.aca_tol
    dense_threshold: int = SolverConfig.dense_threshold
    xi_order: int = Accuracy.xi_order
    element_tol: float = Accuracy.element_tol
    m_tol: float = Accuracy.m_tol
    n_tol: float = Accuracy.n_tol
    stencil_check: bool = True
    jobs: int = 1
    output: Optional[str] = None

    def __post_init__(self):
        if not self.radii or not self.distances:
            raise ValueError("the geometry list is empty")
        if any(not r > 0 for r in self.radii) or any(not d > 0 for d in self.distances):
            raise ValueError("radii and distances must be positive")
        if self.temperature is not None and not self.temperature > 0:
            raise ValueError("temperature must be positive; use zero-temperature mode for T = 0")
        if self.prescription is not None:
            Prescription(self.prescription)
        if not (self.model in ("pr", "plasma", "drude") or self.model.startswith("tabulated:")):
            raise ValueError(f"unknown model {self.model!r}")
        if not self.omega_p_ev > 0 or not self.gamma_ev >= 0:
            raise ValueError("omega_p must be positive and gamma non-negative")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")
        # range checks of the numeric knobs live in the config classes
        self.accuracy()

    def accuracy(self) -> Accuracy:
        solver = SolverConfig(dense_threshold=self.dense_threshold, aca_tol=self.aca_tol)
        return Accuracy(
            eta=self.eta,
            xi_order=self.xi_order,
            element_tol=self.element_tol,
            m_tol=self.m_tol,
            n_tol=self.n_tol,
            stencil_check=self.stencil_check,
            solver=solver,
        )

    def geometries(self) -> list:
        return [Geometry(R, L) for R in self.radii for L in sorted(self.distances)]


def build_model(spec: RunSpec):
    """Material model named by ``spec.model``."""
    if spec.model == "pr":
        return PerfectReflector()
    if spec.model == "plasma":
        return Plasma(spec.omega_p_ev * EV)
    if spec.model == "drude":
        return Drude(spec.omega_p_ev * EV, spec.gamma_ev * EV)
    return load_tabulated(spec.model.split(":", 1)[1])


def _resolved_prescription(spec: RunSpec, model) -> Optional[str]:
    if spec.temperature is None:
        return None
    if spec.prescription is not None:
        return spec.prescription
    return natural_prescription(model).value


def _plasma_frequency(spec: RunSpec, model) -> Optional[float]:
    """``omega_p`` in rad/s used by the model or the plasma ``n = 0`` term."""
    if isinstance(model, PerfectReflector):
        return None
    if isinstance(model, Tabulated):
        return model.low.omega_p
    return model.omega_p


@dataclass(frozen=True)
class SweepRow:
    R: float
    L: float
    T: float  #: NaN at zero temperature
    prescription: str
    free_energy: float
    force: float
    force_gradient: float
    force_pfa: float
    gradient_pfa: float
    beta_like: float
    beta_prime_like: float
    lmax: int
    n_max: int
    m_max: int
    method: str
    wall_time: float
    status: str = "ok"


_NUMERIC = ("R", "L", "T", "free_energy", "force", "force_gradient", "force_pfa", "gradient_pfa", "beta_like", "beta_prime_like", "wall_time")
_INTEGER = ("lmax", "n_max", "m_max")
COLUMNS = tuple(f.name for f in fields(SweepRow))


def _row(spec: RunSpec, geom: Geometry) -> SweepRow:
    t0 = time.perf_counter()
    T = spec.temperature
    pres = "none"
    try:
        model = build_model(spec)
        p = _resolved_prescription(spec, model)
        pres = p or "none"
        est = beta_estimates(geom, T, model, p, spec.accuracy(), PlateAccuracy(), omega_p=_plasma_frequency(spec, model))
        res, ref = est.result, est.reference
        d = res.diagnostics
        for name, value, ok in (
            ("free energy", res.free_energy, res.free_energy < 0),
            ("force", res.force, res.force < 0),
            ("PFA force", ref.force, ref.force < 0),
            ("PFA gradient", ref.force_gradient, ref.force_gradient > 0),
        ):
            if not ok:
                raise ArithmeticError(f"{name} has the wrong sign ({value:.6e})")
        return SweepRow(
            geom.R, geom.L, math.nan if T is None else T, pres,
            res.free_energy, res.force, res.force_gradient, ref.force, ref.force_gradient,
            est.beta_like, est.beta_prime_like, d.lmax, d.n_max, d.m_max,
            ";".join(f"{k}:{v}" for k, v in d.methods.items()),
            time.perf_counter() - t0,
        )
    except Exception as exc:  # row-level record, the sweep goes on
        nan = math.nan
        return SweepRow(
            geom.R, geom.L, math.nan if T is None else T, pres,
            nan, nan, nan, nan, nan, nan, nan, 0, 0, 0, "", time.perf_counter() - t0,
            f"error: {type(exc).__name__}: {exc}",
        )


def _row_task(args):
    return _row(*args)


def run(spec: RunSpec) -> Iterator[SweepRow]:
    """Rows of a sweep in spec order; up to ``spec.jobs`` rows run at once."""
    geoms = spec.geometries()
    tasks = [(spec, g) for g in geoms]
    if spec.jobs == 1 or len(tasks) == 1:
        rows = map(_row_task, tasks)
        pool = None
    else:
        pool = concurrent.futures.ProcessPoolExecutor(max_workers=spec.jobs)
        rows = pool.map(_row_task, tasks)
    try:
        for i, row in enumerate(rows, start=1):
            log.info("row %d/%d R=%.6g m L=%.6g m %s (%.1f s)", i, len(tasks), row.R, row.L, row.status, row.wall_time)
            yield row
    finally:
        if pool is not None:
            pool.shutdown(cancel_futures=True)


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def metadata(spec: RunSpec) -> dict:
    """Everything needed to reproduce a sweep, written as ``#`` lines."""
    constants = {"hbar": hbar, "c": c, "k_B": k_B, "e": e}
    try:
        model = build_model(spec)
    except Exception as exc:  # the rows carry the same error
        used = {"error": f"{type(exc).__name__}: {exc}"}
        return {"tool": "sphereplane", "version": TOOL_VERSION, "spec": asdict(spec), "used": used, "constants": constants}
    wp = _plasma_frequency(spec, model)
    gamma = getattr(model, "gamma", None)
    used = {
        "model": type(model).__name__,
        "prescription": _resolved_prescription(spec, model),
        "omega_p_rad_s": wp,
        "omega_p_ev": None if wp is None else wp / EV,
        "gamma_rad_s": gamma,
        "gamma_ev": None if gamma is None else gamma / EV,
    }
    return {"tool": "sphereplane", "version": TOOL_VERSION, "spec": asdict(spec), "used": used, "constants": constants}


def emit_csv(rows, target: IO[str], spec: RunSpec | None = None) -> int:
    """Write ``#`` metadata, the header and one line per row; returns the number of failed rows."""
    if spec is not None:
        for line in json.dumps(metadata(spec), indent=1, sort_keys=True).splitlines():
            target.write(f"# {line}\n")
    writer = csv.writer(target, lineterminator="\n")
    writer.writerow(COLUMNS)
    failed = 0
    for row in rows:
        writer.writerow([_fmt(getattr(row, col)) for col in COLUMNS])
        target.flush()
        failed += row.status != "ok"
    return failed


def read_csv(source: IO[str]) -> list:
    """Parse :func:`emit_csv` output back into :class:`SweepRow` objects."""
    lines = [ln for ln in source if not ln.startswith("#")]
    out = []
    for rec in csv.DictReader(io.StringIO("".join(lines))):
        kw = {}
        for col in COLUMNS:
            v = rec[col]
            kw[col] = float(v) if col in _NUMERIC else int(v) if col in _INTEGER else v
        out.append(SweepRow(**kw))
    return out


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

PRESETS = {
    # desk-scale version of the Drude curve at the smallest radius
    "fig2-drude-desk": dict(radii=(10.0,), distance_range="150:800:14:linear", temperature=295.0, model="drude"),
}


def _distance_range(text: str) -> tuple:
    """``START:STOP:N[:linear|log]`` in nm, to a tuple in m."""
    parts = text.split(":")
    if len(parts) not in (3, 4):
        raise argparse.ArgumentTypeError("expected START:STOP:N[:linear|log] (nm)")
    try:
        a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse distance range {text!r}") from None
    spacing = parts[3] if len(parts) == 4 else "linear"
    if n < 1 or not 0 < a <= b:
        raise argparse.ArgumentTypeError("need 0 < START <= STOP and N >= 1")
    if spacing == "linear":
        pts = np.linspace(a, b, n)
    elif spacing == "log":
        pts = np.geomspace(a, b, n)
    else:
        raise argparse.ArgumentTypeError(f"spacing must be linear or log, got {spacing!r}")
    return tuple(float(p) * NM for p in pts)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sphereplane", description=__doc__.split("\n\n")[0])
    p.add_argument("--preset", choices=sorted(PRESETS), help="start from a named sweep; other flags override it")
    p.add_argument("--radius", type=float, nargs="+", metavar="UM", help="sphere radii in um")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--distance", type=float, nargs="+", metavar="NM", help="surface distances in nm")
    g.add_argument("--distance-range", type=_distance_range, metavar="START:STOP:N[:SPACING]",
                   help="N distances from START to STOP nm, linear or log spacing")
    t = p.add_mutually_exclusive_group()
    t.add_argument("--temperature", type=float, metavar="K")
    t.add_argument("--zero-temperature", action="store_true")
    p.add_argument("--model", help="pr, plasma, drude or tabulated:<path> (xi in rad/s, eps)")
    p.add_argument("--prescription", choices=[x.value for x in Prescription],
                   help="n = 0 treatment (default: the model's own)")
    p.add_argument("--omegap", type=float, metavar="EV", default=DEFAULT_OMEGA_P_EV)
    p.add_argument("--gamma", type=float, metavar="EV", default=DEFAULT_GAMMA_EV)
    p.add_argument("--eta", type=float, default=Accuracy.eta, help="multipole cutoff l_max = eta R/L")
    p.add_argument("--aca-tol", type=float, default=SolverConfig.aca_tol)
    p.add_argument("--dense-threshold", type=int, default=SolverConfig.dense_threshold)
    p.add_argument("--xi-order", type=int, default=Accuracy.xi_order, help="zero-temperature frequency nodes")
    p.add_argument("--element-tol", type=float, default=Accuracy.element_tol)
    p.add_argument("--m-tol", type=float, default=Accuracy.m_tol)
    p.add_argument("--n-tol", type=float, default=Accuracy.n_tol)
    p.add_argument("--no-stencil-check", action="store_true", help="skip the h/2 stencil consistency check")
    p.add_argument("--jobs", type=int, default=1, help="rows computed in parallel")
    p.add_argument("--output", "-o", metavar="PATH", help="CSV file (default: standard output)")
    p.add_argument("--quiet", "-q", action="store_true")
    return p


def parse_args(argv: Sequence[str] | None = None) -> RunSpec:
    """Command line to a validated :class:`RunSpec`."""
    parser = _parser()
    a = parser.parse_args(argv)
    base = dict(PRESETS[a.preset]) if a.preset else {}
    radii = tuple(r * UM for r in a.radius) if a.radius else tuple(r * UM for r in base.get("radii", ()))
    if a.distance:
        distances = tuple(d * NM for d in a.distance)
    elif a.distance_range:
        distances = a.distance_range
    elif "distance_range" in base:
        distances = _distance_range(base["distance_range"])
    else:
        distances = ()
    if a.zero_temperature:
        T = None
    elif a.temperature is not None:
        T = a.temperature
    else:
        T = base.get("temperature", 295.0)
    if not radii or not distances:
        parser.error("give --radius and --distance/--distance-range (or a --preset)")
    try:
        return RunSpec(
            radii=radii,
            distances=distances,
            temperature=T,
            model=a.model or base.get("model", "drude"),
            prescription=a.prescription,
            omega_p_ev=a.omegap,
            gamma_ev=a.gamma,
            eta=a.eta,
            aca_tol=a.aca_tol,
            dense_threshold=a.dense_threshold,
            xi_order=a.xi_order,
            element_tol=a.element_tol,
            m_tol=a.m_tol,
            n_tol=a.n_tol,
            stencil_check=not a.no_stencil_check,
            jobs=a.jobs,
            output=a.output,
        )
    except ValueError as exc:
        parser.error(str(exc))


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    spec = parse_args(argv)
    logging.basicConfig(level=logging.WARNING if "-q" in argv or "--quiet" in argv else logging.INFO,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    rows = run(spec)
    if spec.output:
        with open(spec.output, "w", newline="") as fh:
            failed = emit_csv(rows, fh, spec)
    else:
        failed = emit_csv(rows, sys.stdout, spec)
    if failed:
        log.error("%d row(s) failed", failed)
    return 1 if failed else 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
