"""Spectral tools and desk-scale convex integration for the inviscid Boussinesq system on T^3."""
__version__ = "0.1.0"

from .spectral_core import (TorusGrid, ScalarField, VectorField, SymMatrixField, Mollifier, grad,
                            divergence, curl, leray_project, inverse_div_R, inverse_div_Rvex,
                            mollify_space, holder_norm, sup_norm, random_field)
from .boussinesq_solver import (BoussinesqState, RelaxedState, Trajectory, SolverAbort, solve_local,
                                relaxed_residual, shear_flow, random_state)
