"""Lagrangian scheme for viscous compressible barotropic flow.

Linearized compressible Stokes semigroup on a periodic box or a radially
symmetric exterior domain, nonlinear Lagrangian terms, Picard iteration in
weighted space-time norms, and decay-rate experiments.
"""
__version__ = "0.1.0"

from .params import ModelParams, PressureLaw, DomainError, pressure_deriv
from .grid import DomainSpec, grad, div, laplace, deform, lq_norm, sobolev_norm
from .fields import FieldState, TrajectoryRecord, AdmissibilityError, EULER, LAGRANGE

__all__ = [
    "ModelParams", "PressureLaw", "DomainError", "pressure_deriv",
    "DomainSpec", "grad", "div", "laplace", "deform", "lq_norm", "sobolev_norm",
    "FieldState", "TrajectoryRecord", "AdmissibilityError", "EULER", "LAGRANGE",
    "__version__",
]
