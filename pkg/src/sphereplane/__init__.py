"""Casimir interaction of a sphere above a plane from the scattering approach.

Modules
-------
materials
    Permittivities on the imaginary axis and Fresnel coefficients.
specfun
    Log-scaled Bessel functions, associated Legendre tables, Mie coefficients.
scattering
    Round-trip blocks for one ``(m, xi)`` pair.
hodlr
    ``ln det(1 - M)`` by dense, low-rank and HODLR paths.
thermo
    Matsubara sums, zero-frequency terms, force and force gradient.
pfa
    Plate energy, PFA references and beyond-PFA coefficients.
cli
    Sweeps and CSV output.
"""
from .hodlr import SolverConfig, logdet
from .materials import Drude, PerfectReflector, Plasma, default_gold, load_tabulated
from .pfa import (
    BetaEstimate,
    PlateAccuracy,
    beta_estimates,
    extrapolate_beta,
    lifshitz_pp,
    pfa_reference,
    violates_bound,
)
from .scattering import Geometry, assemble_block
from .thermo import (
    Accuracy,
    Prescription,
    force_and_gradient,
    free_energy,
    free_energy_T0,
    zero_freq_term,
)

__version__ = "0.1.0"

__all__ = [
    "Accuracy",
    "BetaEstimate",
    "Drude",
    "Geometry",
    "PerfectReflector",
    "Plasma",
    "PlateAccuracy",
    "Prescription",
    "SolverConfig",
    "assemble_block",
    "beta_estimates",
    "default_gold",
    "extrapolate_beta",
    "force_and_gradient",
    "free_energy",
    "free_energy_T0",
    "lifshitz_pp",
    "load_tabulated",
    "logdet",
    "pfa_reference",
    "violates_bound",
    "zero_freq_term",
]
