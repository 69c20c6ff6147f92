"""Flat ``key = value`` configuration files.

One setting per line, dotted keys (``model.Pe = 1``), ``#`` starts a comment.
Floats may be written in decimal or as C99 hex floats (``0x1.0624dd2f1a9fcp-10``)
for bit-exact round trips.  Unknown keys are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

from .forms import ModelParams, PenaltySet
from .linalg import METHODS, PRECONDITIONERS, NewtonConfig, SolverConfig
from .mesh import PlaneSelector, SpecError
from .stepper import SchemeConfig, SchemeVariant


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending setting."""

    def __init__(self, key, msg):
        super().__init__(f"{key}: {msg}" if key else msg)
        self.key = key


SCENARIOS = ("spinodal", "droplets", "channel")
GEOMETRIES = ("box", "torus", "annulus", "microstructure", "file")
REQUIRED = object()


def _positive(v):
    return v > 0


def _nonneg(v):
    return v >= 0


# key: (type, default, check, description)
SCHEMA = {
    "scenario": (str, REQUIRED, lambda v: v in SCENARIOS, f"one of {SCENARIOS}"),
    "seed": (int, 0, _nonneg, "RNG seed for random initial data"),
    "mesh.geometry": (str, "box", lambda v: v in GEOMETRIES, f"one of {GEOMETRIES}"),
    "mesh.file": (str, "", None, "voxel mask file when geometry = file"),
    "mesh.dim": (int, 2, lambda v: v in (2, 3), "2 or 3"),
    "mesh.resolution": (int, 64, _positive, "cells per unit length"),
    "mesh.buffer": (int, 0, _nonneg, "buffer columns in front of a microstructure (0: automatic)"),
    "boundary.inflow": (str, "", None, "comma-separated planes, e.g. x=0"),
    "boundary.outflow": (str, "", None, "comma-separated planes, e.g. x=1"),
    "dg.degree": (int, 1, lambda v: v in (1, 2), "1 or 2"),
    "time.tau": (float, REQUIRED, _positive, "time step"),
    "time.steps": (int, REQUIRED, _nonneg, "number of steps"),
    "model.Pe": (float, 1.0, _positive, ""),
    "model.Cn": (float, 0.0, _nonneg, "0 means Cn = h"),
    "model.Re": (float, 1.0, _positive, ""),
    "model.Ca": (float, 0.1, _positive, ""),
    "model.rho_A": (float, 1200.0, _positive, ""),
    "model.rho_B": (float, 800.0, _positive, ""),
    "model.rho_ref": (float, 0.0, _nonneg, "0 means min(rho_A, rho_B)"),
    "model.theta": (float, 90.0, lambda v: 0 <= v <= 180, "contact angle in degrees"),
    "model.delta": (float, 1.0, _positive, "wall correction factor"),
    "model.c_D": (float, 1.0, lambda v: -1 <= v <= 1, "order parameter on inflow faces"),
    "inflow.scale": (float, 1.0, None, "multiplier of the inflow velocity profile"),
    "init.c": (float, -1.0, lambda v: -1 <= v <= 1, "initial order parameter (channel)"),
    "penalty.diff": (float, 2.0, _positive, ""),
    "penalty.diff_in": (float, 4.0, _positive, ""),
    "penalty.diff_out": (float, 8.0, _positive, ""),
    "penalty.ellip_interior": (float, 8.0, _positive, ""),
    "penalty.ellip_in": (float, 32.0, _positive, ""),
    "penalty.bvel": (float, 32.0, _positive, ""),
    "limiter.flux": (bool, True, None, ""),
    "limiter.slope": (bool, True, None, ""),
    "limiter.eps1": (float, 1e-7, _nonneg, ""),
    "limiter.eps2": (float, 1e-7, _nonneg, ""),
    "scheme.variant": (str, "constant", lambda v: v in ("constant", "standard"), "constant or standard"),
    "newton.tol": (float, 1e-9, _positive, ""),
    "newton.maxiter": (int, 25, _positive, ""),
    "newton.forcing": (float, 1e-4, lambda v: 0 < v < 1, ""),
    "newton.schedule": (str, "constant", lambda v: v in ("constant", "eisenstat-walker"), ""),
    "newton.lu_reuse": (int, 8, _positive, "refactor when a solve needs more Krylov iterations"),
    "solver.ch.method": (str, "gmres", lambda v: v in METHODS, ""),
    "solver.ch.restart": (int, 50, _positive, ""),
    "solver.ch.maxiter": (int, 200, _positive, ""),
    "solver.momentum.method": (str, "bicgstab", lambda v: v in METHODS, ""),
    "solver.momentum.preconditioner": (str, "jacobi", lambda v: v in PRECONDITIONERS, ""),
    "solver.momentum.rtol": (float, 1e-10, _positive, ""),
    "solver.momentum.maxiter": (int, 1000, _positive, ""),
    "solver.pressure.method": (str, "direct", lambda v: v in METHODS, ""),
    "solver.pressure.preconditioner": (str, "jacobi", lambda v: v in PRECONDITIONERS, ""),
    "solver.pressure.rtol": (float, 1e-10, _positive, ""),
    "solver.pressure.maxiter": (int, 5000, _positive, ""),
    "output.dir": (str, "output", None, "directory for all outputs"),
    "output.observables": (str, "observables.csv", None, "CSV file name"),
    "output.diagnostics": (str, "limiter.csv", None, "per-step limiter report ('' disables)"),
    "output.vtk_every": (int, 0, _nonneg, "VTK cadence in steps (0: initial and final only)"),
    "output.checkpoint_every": (int, 0, _nonneg, "checkpoint cadence in steps (0: final only)"),
}


def _parse_float(text: str) -> float:
    t = text.strip()
    low = t.lower().lstrip("+-")
    if low.startswith("0x"):
        return float.fromhex(t)
    return float(t)


def _parse_value(key: str, typ, text: str):
    try:
        if typ is bool:
            low = text.strip().lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(text)
        if typ is int:
            return int(text.strip())
        if typ is float:
            v = _parse_float(text)
            if not math.isfinite(v):
                raise ValueError(text)
            return v
        return text.strip()
    except ValueError:
        raise ConfigError(key, f"expected {typ.__name__}, got {text.strip()!r}") from None


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass(frozen=True)
class SimulationConfig:
    """Validated settings; ``values`` maps every schema key to its typed value."""

    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def with_values(self, **updates) -> "SimulationConfig":
        """Copy with dotted keys given as ``mesh__resolution=32`` style keywords."""
        vals = dict(self.values)
        for k, v in updates.items():
            vals[k.replace("__", ".")] = v
        return validate(vals)

    # -- derived objects -------------------------------------------------
    def planes(self, key) -> tuple[PlaneSelector, ...]:
        text = self.values[key]
        try:
            return tuple(PlaneSelector.parse(p) for p in text.split(",") if p.strip())
        except SpecError as exc:
            raise ConfigError(key, str(exc)) from None

    def model_params(self, h: float, v_D=None) -> ModelParams:
        g = self.values
        return ModelParams(
            Pe=g["model.Pe"], Cn=g["model.Cn"] or h, Re=g["model.Re"], Ca=g["model.Ca"],
            rho_A=g["model.rho_A"], rho_B=g["model.rho_B"], rho_ref=g["model.rho_ref"] or None,
            theta=g["model.theta"], delta=g["model.delta"], c_D=g["model.c_D"], v_D=v_D)

    def penalties(self) -> PenaltySet:
        g = self.values
        return PenaltySet(g["penalty.diff"], g["penalty.diff_in"], g["penalty.diff_out"],
                          g["penalty.ellip_interior"], g["penalty.ellip_in"], g["penalty.bvel"])

    def scheme(self, params: ModelParams) -> SchemeConfig:
        g = self.values
        newton = NewtonConfig(
            tol=g["newton.tol"], maxiter=g["newton.maxiter"], forcing=g["newton.forcing"],
            schedule=g["newton.schedule"],
            linear=SolverConfig(method=g["solver.ch.method"], preconditioner="lu", rtol=g["newton.forcing"],
                                maxiter=g["solver.ch.maxiter"], restart=g["solver.ch.restart"]))
        momentum = SolverConfig(method=g["solver.momentum.method"], preconditioner=g["solver.momentum.preconditioner"],
                                rtol=g["solver.momentum.rtol"], maxiter=g["solver.momentum.maxiter"])
        pressure = SolverConfig(method=g["solver.pressure.method"], preconditioner=g["solver.pressure.preconditioner"],
                                rtol=g["solver.pressure.rtol"], maxiter=g["solver.pressure.maxiter"])
        return SchemeConfig(
            tau=g["time.tau"], params=params, penalties=self.penalties(),
            flux_limiter=g["limiter.flux"], slope_limiter=g["limiter.slope"],
            eps1=g["limiter.eps1"], eps2=g["limiter.eps2"], variant=SchemeVariant(g["scheme.variant"]),
            newton=newton, momentum_solver=momentum, pressure_solver=pressure,
            lu_reuse_iterations=g["newton.lu_reuse"])


def validate(values: dict) -> SimulationConfig:
    """Apply defaults, check types and invariants, reject unknown keys."""
    out = {}
    for key in values:
        if key not in SCHEMA:
            raise ConfigError(key, "unknown key")
    for key, (typ, default, check, desc) in SCHEMA.items():
        if key in values:
            v = values[key]
            if isinstance(v, str) and typ is not str:
                v = _parse_value(key, typ, v)
            elif typ is float and isinstance(v, int) and not isinstance(v, bool):
                v = float(v)
            if not isinstance(v, typ) or (typ is int and isinstance(v, bool)):
                raise ConfigError(key, f"expected {typ.__name__}, got {v!r}")
        elif default is REQUIRED:
            raise ConfigError(key, "missing required key")
        else:
            v = default
        if check is not None and not check(v):
            raise ConfigError(key, f"invalid value {v!r}" + (f" ({desc})" if desc else ""))
        out[key] = v
    if out["mesh.geometry"] == "file" and not out["mesh.file"]:
        raise ConfigError("mesh.file", "required when mesh.geometry = file")
    if out["mesh.geometry"] == "torus" and out["mesh.dim"] != 3:
        raise ConfigError("mesh.dim", "the torus geometry is three-dimensional")
    if out["mesh.geometry"] == "annulus" and out["mesh.dim"] != 2:
        raise ConfigError("mesh.dim", "the annulus geometry is two-dimensional")
    cfg = SimulationConfig(out)
    cfg.planes("boundary.inflow")
    cfg.planes("boundary.outflow")
    return cfg


def parse_config(text: str) -> SimulationConfig:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(None, f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(key, f"unknown key (line {lineno})")
        if key in raw:
            raise ConfigError(key, f"duplicate key (line {lineno})")
        typ = SCHEMA[key][0]
        raw[key] = _parse_value(key, typ, val)
    return validate(raw)


def load_config(path) -> SimulationConfig:
    with open(path, "r") as fh:
        return parse_config(fh.read())


def serialize_config(cfg: SimulationConfig) -> str:
    """Every key with its value; floats use ``repr`` so parsing is exact."""
    return "".join(f"{k} = {_format_value(v)}\n" for k, v in cfg.values.items())
