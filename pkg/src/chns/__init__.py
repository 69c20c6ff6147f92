"""Bound-preserving discontinuous Galerkin solver for two-phase Cahn-Hilliard-Navier-Stokes flow
on voxel meshes."""

__version__ = "0.1.0"
