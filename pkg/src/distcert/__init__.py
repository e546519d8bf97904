"""Rate certificates, parameter design and worst-case analysis for distributed optimization algorithms."""

from .algorithms import Realization, catalog, check_fixed_point, check_implementable
from .certify import Certificate, ProblemClass, certify_rate, feasible
from .svl import SVLDesign, design

__all__ = [
    "Certificate", "ProblemClass", "Realization", "SVLDesign", "catalog", "certify_rate",
    "check_fixed_point", "check_implementable", "design", "feasible",
]
__version__ = "0.1.0"
