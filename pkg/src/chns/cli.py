"""``chns`` command line.

Exit codes: 0 success, 1 configuration or input error, 2 runtime failure.
The worker count for element loops is read from ``CHNS_WORKERS``.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config
from .mesh import GeometryError, SpecError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chns", description="Bound-preserving DG Cahn-Hilliard-Navier-Stokes solver")
    p.add_argument("-v", "--verbose", action="store_true", help="log every step")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a simulation from a config file")
    r.add_argument("config")
    r.add_argument("--output", help="override output.dir")
    r.add_argument("--steps", type=int, help="override time.steps")
    v = sub.add_parser("validate", help="check a config file and print it with defaults filled in")
    v.add_argument("config")
    m = sub.add_parser("mask-info", help="summarize a voxel mask file")
    m.add_argument("maskfile")
    c = sub.add_parser("resume", help="continue a run from a checkpoint")
    c.add_argument("checkpoint")
    c.add_argument("--steps", type=int, help="new total number of steps")
    c.add_argument("--output", help="output directory (default: the checkpoint's directory)")
    return p


def _run(args) -> int:
    from .app import run

    cfg = load_config(args.config)
    if args.steps is not None:
        cfg = cfg.with_values(time__steps=args.steps)
    res = run(cfg, args.output)
    print(f"completed {res.steps} steps; output in {res.outdir}")
    return EXIT_OK


def _validate(args) -> int:
    from .config import serialize_config

    cfg = load_config(args.config)
    sys.stdout.write(serialize_config(cfg))
    return EXIT_OK


def _mask_info(args) -> int:
    from .app import mask_info

    for k, v in mask_info(args.maskfile).items():
        print(f"{k}: {v}")
    return EXIT_OK


def _resume(args) -> int:
    from .app import resume

    res = resume(args.checkpoint, args.steps, args.output)
    print(f"resumed to step {res.steps}; output in {res.outdir}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    from .stepper import StepError

    handler = {"run": _run, "validate": _validate, "mask-info": _mask_info, "resume": _resume}[args.command]
    try:
        return handler(args)
    except (ConfigError, GeometryError, SpecError, ValueError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StepError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        if exc.history:
            print("residual history: " + ", ".join(f"{r:.3e}" for r in exc.history), file=sys.stderr)
        return EXIT_RUNTIME
    except (RuntimeError, ArithmeticError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
