"""Relaxed fixed-point (Koshelev-type) finite-element iteration for
quasilinear elliptic systems ``-div a(x, Du) = -div f`` with p-growth."""

from .constants import ConstantsReport, contraction_rate, gamma_star_symmetric, kab_for_fields, koshelev_kgamma
from .fem import P1Function, assemble_jacobian, assemble_residual, error_h1, interpolate, norm
from .fields import StructureField, field_check, identity_field, linear_field, p_laplace_field, quartic_field
from .iteration import IterationTrace, Problem, aposteriori, iterate, multilevel, rate_estimate
from .mesh import SimplicialMesh, prolong, refine, unit_cube_mesh

__all__ = [
    "ConstantsReport", "IterationTrace", "P1Function", "Problem", "SimplicialMesh", "StructureField",
    "aposteriori", "assemble_jacobian", "assemble_residual", "contraction_rate", "error_h1", "field_check",
    "gamma_star_symmetric", "identity_field", "interpolate", "iterate", "kab_for_fields", "koshelev_kgamma",
    "linear_field", "multilevel", "norm", "p_laplace_field", "prolong", "quartic_field", "rate_estimate",
    "refine", "unit_cube_mesh",
]
__version__ = "0.1.0"
