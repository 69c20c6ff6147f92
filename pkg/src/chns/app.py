"""Run loop, restart and the ``mask-info`` summary behind the CLI."""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
import os

from .config import SimulationConfig, parse_config, serialize_config
from .io import ObservableWriter, read_observables, write_vtk
from .mesh import build_voxel_mesh, read_mask
from .scenarios import build_scenario
from .stepper import FlowState, StepReport, Stepper, load_checkpoint, save_checkpoint

log = logging.getLogger("chns")


@dataclass
class RunResult:
    steps: int
    final: FlowState
    records: list = field(default_factory=list)
    outdir: str = ""
    counts: dict = field(default_factory=dict)


def _record(stepper: Stepper, state: FlowState, report: StepReport | None) -> dict:
    rec = stepper.observables(state)
    rec["limiter_iterations"] = report.limiter.iterations if report is not None and report.limiter else 0
    rec["troubled"] = report.troubled if report is not None else 0
    return rec


def _diagnostics_line(n, report: StepReport) -> str:
    lim = report.limiter
    if lim is None:
        return f"{n},0,0.0,{report.troubled},,,,\n"
    return (f"{n},{lim.iterations},{lim.max_residual_flux!r},{report.troubled},"
            f"{lim.min_before!r},{lim.max_before!r},{lim.min_after!r},{lim.max_after!r}\n")


def checkpoint_path(outdir, n) -> str:
    return os.path.join(outdir, f"checkpoint_{n:06d}.npz")


def _loop(cfg: SimulationConfig, stepper: Stepper, state: FlowState, outdir: str, append: bool,
          records: list) -> FlowState:
    steps = cfg["time.steps"]
    vtk_every = cfg["output.vtk_every"]
    ck_every = cfg["output.checkpoint_every"]
    text = serialize_config(cfg)
    diag = None
    if cfg["output.diagnostics"]:
        dpath = os.path.join(outdir, cfg["output.diagnostics"])
        fresh = not (append and os.path.exists(dpath))
        diag = open(dpath, "w" if fresh else "a")
        if fresh:
            diag.write("n,sweeps,max_residual_flux,troubled,min_before,max_before,min_after,max_after\n")
    opath = os.path.join(outdir, cfg["output.observables"])
    try:
        with ObservableWriter(opath, append=append) as obs:
            if not append:
                rec = _record(stepper, state, None)
                obs.write(rec)
                records.append(rec)
                write_vtk(state, stepper.mesh, os.path.join(outdir, f"state_{state.n:06d}.vtk"))
            while state.n < steps:
                report = StepReport()
                state = stepper.advance(state, report)
                rec = _record(stepper, state, report)
                obs.write(rec)
                records.append(rec)
                if diag is not None:
                    diag.write(_diagnostics_line(state.n, report))
                if (vtk_every and state.n % vtk_every == 0) or state.n == steps:
                    write_vtk(state, stepper.mesh, os.path.join(outdir, f"state_{state.n:06d}.vtk"))
                if (ck_every and state.n % ck_every == 0) or state.n == steps:
                    save_checkpoint(checkpoint_path(outdir, state.n), state, {"config": text})
                    # a resumed run starts from a fresh factorization; do the same here
                    stepper.invalidate_preconditioner()
                log.info("step %d  min_c %.6f  max_c %.6f  mean_c %.15f", state.n, rec["min_c"], rec["max_c"],
                         rec["mean_c"])
    finally:
        if diag is not None:
            diag.close()
    return state


def run(cfg: SimulationConfig, outdir: str | None = None) -> RunResult:
    """Execute ``time.steps`` steps from the scenario's initial data."""
    outdir = outdir or cfg["output.dir"]
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "config.cfg"), "w") as fh:
        fh.write(serialize_config(cfg))
    sc = build_scenario(cfg)
    stepper = Stepper(sc.space, cfg.scheme(sc.params))
    state = stepper.initialize(sc.c0, sc.v0)
    records = []
    final = _loop(cfg, stepper, state, outdir, False, records)
    return RunResult(final.n, final, records, outdir, dict(stepper.counts))


def resume(path, steps: int | None = None, outdir: str | None = None) -> RunResult:
    """Continue the run stored in checkpoint ``path``.

    The observables file in the output directory is truncated to the
    checkpoint step before new rows are appended.
    """
    _, meta = load_checkpoint(path)
    cfg = parse_config(meta["config"])
    if steps is not None:
        cfg = cfg.with_values(time__steps=steps)
    outdir = outdir or os.path.dirname(os.path.abspath(path))
    sc = build_scenario(cfg)
    state, _ = load_checkpoint(path, sc.space)
    stepper = Stepper(sc.space, cfg.scheme(sc.params))
    opath = os.path.join(outdir, cfg["output.observables"])
    if os.path.exists(opath):
        _truncate_csv(opath, state.n)
    dpath = os.path.join(outdir, cfg["output.diagnostics"]) if cfg["output.diagnostics"] else None
    if dpath and os.path.exists(dpath):
        _truncate_csv(dpath, state.n)
    records = []
    final = _loop(cfg, stepper, state, outdir, os.path.exists(opath), records)
    return RunResult(final.n, final, records, outdir, dict(stepper.counts))


def _truncate_csv(path, n):
    with open(path) as fh:
        lines = fh.readlines()
    keep = lines[:1] + [ln for ln in lines[1:] if ln.strip() and int(ln.split(",", 1)[0]) <= n]
    with open(path, "w") as fh:
        fh.writelines(keep)


def mask_info(path) -> dict:
    """Counts and extents of a voxel mask file."""
    mask, h = read_mask(path)
    mesh = build_voxel_mesh(mask, h=h)
    return {
        "dim": mesh.dim,
        "shape": tuple(int(s) for s in mask.shape),
        "h": h,
        "active_cells": mesh.n_elements,
        "porosity": float(mask.mean()),
        "interior_faces": mesh.n_interior_faces,
        "boundary_faces": mesh.n_boundary_faces,
        "volume": mesh.volume,
        "extent": tuple(float(s * h) for s in mask.shape),
    }


def read_run_observables(outdir, cfg: SimulationConfig | None = None) -> list[dict]:
    name = cfg["output.observables"] if cfg is not None else "observables.csv"
    return read_observables(os.path.join(outdir, name))


__all__ = ["RunResult", "run", "resume", "mask_info", "checkpoint_path", "read_run_observables"]
