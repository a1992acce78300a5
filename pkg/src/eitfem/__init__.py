"""Finite element complete-electrode-model EIT on polygons and inscribed polygons of a disk:
forward solves, Tikhonov reconstruction and mesh-refinement studies."""
from . import cem_forward, convergence_lab, errors, fem, geometry, mesh, tikhonov

__all__ = ["cem_forward", "convergence_lab", "errors", "fem", "geometry", "mesh", "tikhonov"]
__version__ = "0.1.0"
