"""Desk-scale versions of the three benchmark setups.

``spinodal``  closed domain, cell averages sampled uniformly from {-1, +1}.
``droplets``  closed box, two tanh droplets of phase A in phase B.
``channel``   open domain (box or microstructure) filled with phase B,
              phase A pushed in through ``x = 0`` by a parabolic profile.
"""

from __future__ import annotations

from dataclasses import dataclass
import math
from typing import Callable

import numpy as np

from .config import ConfigError, SimulationConfig
from .dg import DGField, DGSpace
from .forms import ModelParams
from .mesh import (BoundarySpec, GeometryError, PlaneSelector, VoxelMesh, annulus_mask, box_mask,
                   build_voxel_mesh, classify_boundary, microstructure_mask, read_mask, torus_mask)

DROPLET_RADIUS = 0.25
# center-to-center distance of the droplets in the unit cube, 0.3 * sqrt(3)
DROPLET_DISTANCE = 0.3 * math.sqrt(3.0)


@dataclass
class Scenario:
    """Everything a run needs besides the scheme settings."""

    mesh: VoxelMesh
    space: DGSpace
    params: ModelParams
    c0: DGField
    v0: Callable | None
    inflow: Callable | None


def _geometry(cfg: SimulationConfig):
    """``(mask, h)`` for the configured geometry."""
    geo, n, dim = cfg["mesh.geometry"], cfg["mesh.resolution"], cfg["mesh.dim"]
    if geo == "file":
        try:
            return read_mask(cfg["mesh.file"])
        except OSError as exc:
            raise ConfigError("mesh.file", str(exc)) from None
    if geo == "box":
        return box_mask((n,) * dim), 1.0 / n
    if geo == "torus":
        return torus_mask(n), 1.0 / n
    if geo == "annulus":
        return annulus_mask(n), 1.0 / n
    return microstructure_mask(n, cfg["mesh.buffer"] or None, dim), 1.0 / n


def inflow_profile(dim: int, scale: float = 1.0) -> Callable:
    """Velocity prescribed on inflow faces, pointing in ``+x``.

    In 3D this is ``400 y (y-1) (z-2/5) (z-3/5)``; in 2D the slice ``z = 1/2`` of
    that formula, ``4 y (1-y)``.  Both equal ``scale`` at the channel center.
    """

    def v_D(X):
        X = np.atleast_2d(X)
        y = X[:, 1]
        if dim == 3:
            z = X[:, 2]
            ux = 400.0 * y * (y - 1.0) * (z - 0.4) * (z - 0.6)
        else:
            ux = 4.0 * y * (1.0 - y)
        out = np.zeros((X.shape[0], dim))
        out[:, 0] = scale * ux
        return out

    return v_D


def droplet_centers(dim: int):
    """Two centers on the main diagonal, symmetric about the box center.

    In 3D these are (0.35, 0.35, 0.35) and (0.65, 0.65, 0.65).  In 2D the
    centers keep the same separation along the diagonal, so the gap between
    the droplets is the same as in 3D (projecting the 3D centers would make
    the disks overlap).
    """
    off = 0.5 * DROPLET_DISTANCE / math.sqrt(dim)
    return np.full(dim, 0.5 - off), np.full(dim, 0.5 + off)


def droplet_field(X, Cn: float):
    """Max of two tanh profiles, floored at -1."""
    X = np.atleast_2d(X)
    a, b = droplet_centers(X.shape[1])
    s = math.sqrt(2.0) * Cn
    da = np.linalg.norm(X - a, axis=1)
    db = np.linalg.norm(X - b, axis=1)
    return np.maximum(-1.0, np.maximum(np.tanh((DROPLET_RADIUS - da) / s), np.tanh((DROPLET_RADIUS - db) / s)))


def spinodal_averages(n_elements: int, seed: int) -> np.ndarray:
    """Cell averages drawn from the discrete uniform distribution on {-1, +1}."""
    rng = np.random.default_rng(seed)
    return rng.choice(np.array([-1.0, 1.0]), size=n_elements)


def _boundary(cfg: SimulationConfig, mesh: VoxelMesh, mask, h):
    inflow = cfg.planes("boundary.inflow")
    outflow = cfg.planes("boundary.outflow")
    if cfg["scenario"] == "channel" and not inflow and not outflow:
        inflow = (PlaneSelector(0, 0.0),)
        outflow = (PlaneSelector(0, mask.shape[0] * h),)
    if not inflow and not outflow:
        return mesh
    try:
        return classify_boundary(mesh, BoundarySpec(inflow, outflow))
    except ValueError as exc:
        raise ConfigError("boundary.inflow", str(exc)) from None


def build_scenario(cfg: SimulationConfig) -> Scenario:
    """Mesh, discrete space, parameters and initial data for ``cfg``."""
    name = cfg["scenario"]
    try:
        mask, h = _geometry(cfg)
        mesh = build_voxel_mesh(mask, h=h)
    except GeometryError as exc:
        raise ConfigError("mesh.geometry", str(exc)) from None
    mesh = _boundary(cfg, mesh, mask, h)
    space = DGSpace(mesh, cfg["dg.degree"])
    inflow = inflow_profile(mesh.dim, cfg["inflow.scale"]) if mesh.tag_counts().get("inflow", 0) else None
    params = cfg.model_params(h, v_D=inflow)
    if name == "spinodal":
        c0 = space.from_averages(spinodal_averages(mesh.n_elements, cfg["seed"]))
    elif name == "droplets":
        c0 = space.project(lambda X: droplet_field(X, params.Cn), 1)
    elif name == "channel":
        c0 = space.constant(cfg["init.c"])
    else:  # pragma: no cover - rejected by the config schema
        raise ConfigError("scenario", f"unknown scenario {name!r}")
    return Scenario(mesh, space, params, c0, None, inflow)
