"""Finite element solver for free flow coupled to total-pressure poroelasticity."""

from .fem import ElementKind
from .forms import AXISYM, CARTESIAN, FormId, FunctionalExtras, MaterialParams, assemble
from .mesh import Mesh, MeshError, Subdomain, generate_two_layer_rect, read_mesh, uniform_refine, write_mesh
from .system import MINI, TAYLOR_HOOD, CoupledProblem, DirichletBC, NitscheBC, SolutionState

__version__ = "0.1.0"

__all__ = [
    "AXISYM", "CARTESIAN", "MINI", "TAYLOR_HOOD", "CoupledProblem", "DirichletBC", "ElementKind", "FormId",
    "FunctionalExtras", "MaterialParams", "Mesh", "MeshError", "NitscheBC", "SolutionState", "Subdomain",
    "assemble", "generate_two_layer_rect", "read_mesh", "uniform_refine", "write_mesh",
]
