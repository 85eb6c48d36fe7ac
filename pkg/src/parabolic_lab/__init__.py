"""Numerical laboratory for the parabolic Dirichlet problem on graph domains."""

from .geometry import (BoundaryBall, GeometryError, GraphDomain, Grid, ParabolicCube,
                       ParabolicPoint, par_dist)
from .solver import (AssemblyError, BoundaryData, Coefficients, DiscreteSolution,
                     SolverError, adjoint_measure, assemble, solve)

__version__ = "0.1.0"

__all__ = [
    "AssemblyError",
    "BoundaryBall",
    "BoundaryData",
    "Coefficients",
    "DiscreteSolution",
    "GeometryError",
    "GraphDomain",
    "Grid",
    "ParabolicCube",
    "ParabolicPoint",
    "SolverError",
    "adjoint_measure",
    "assemble",
    "par_dist",
    "solve",
]
