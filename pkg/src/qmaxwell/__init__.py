"""Quasilinear Maxwell equations with Silver-Mueller absorbing boundaries.

A summation-by-parts laboratory that evolves the constitutive Maxwell system
on a box and evaluates energy identities, dissipativity, multiplier estimates,
divergence preservation and decay rates along the computed trajectories.
"""

from .config import Scenario, load, parse_text
from .diagnostics import EnergyTrace, decay_fit, energy_balance_residual, trace_decay_fit
from .geometry import BoxDomain, J_of, R_of, check_star_shaped, multiplier
from .initdata import InitialData, build_compat_fields, make_scenario, project_solenoidal
from .materials import (
    AnisotropicKerr,
    ConstantAnisotropic,
    ConstantIsotropic,
    Impedance,
    MaterialLaw,
    ScalarKerr,
    VaryingIsotropic,
    eval_linearized,
)
from .sbp import SbpOperators
from .solver import FieldState, MaxwellSolver, SolverConfig, run

__version__ = "0.1.0"
