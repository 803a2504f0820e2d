"""Numerical laboratory for the spherical pure p-spin model near its ground state."""

from .constants import ModelParams, TheoryConstants, solve_constants
from .hamiltonian import DisorderTensor, SpherePoint, read_disorder, sample_disorder, write_disorder

__version__ = "0.1.0"

__all__ = [
    "ModelParams",
    "TheoryConstants",
    "solve_constants",
    "DisorderTensor",
    "SpherePoint",
    "sample_disorder",
    "read_disorder",
    "write_disorder",
    "__version__",
]
