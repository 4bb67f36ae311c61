"""Numerics for the fractional heat operator :math:`(\\partial_t-\\Delta)^s`."""

from .kernel import DomainError, FracParams, SpaceTimePoint, eval_kernel
from .quadrature import QuadratureSpec
from .fields import FieldHandle, Growth
from .operator import apply_master, apply_marchaud, apply_frac_laplacian, check_admissible

__all__ = [
    "DomainError",
    "FracParams",
    "SpaceTimePoint",
    "eval_kernel",
    "QuadratureSpec",
    "FieldHandle",
    "Growth",
    "apply_master",
    "apply_marchaud",
    "apply_frac_laplacian",
    "check_admissible",
]

__version__ = "0.1.0"
