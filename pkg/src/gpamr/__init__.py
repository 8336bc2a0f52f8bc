"""Geometry-projection topology optimization with bar components on adaptive quadtree meshes."""
from .amr import AmrParams, adapt
from .fem import BoundaryConditions, ElasticitySystem, Material
from .geometry import BarComponent, ProjectionParams, composite_density
from .mesh import QuadMesh

__version__ = "0.1.0"

__all__ = ["AmrParams", "adapt", "BoundaryConditions", "ElasticitySystem", "Material",
           "BarComponent", "ProjectionParams", "composite_density", "QuadMesh"]
