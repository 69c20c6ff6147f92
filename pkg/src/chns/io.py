"""Legacy VTK output and the observables CSV."""

from __future__ import annotations

import csv
import os

import numpy as np

OBSERVABLE_FIELDS = ("n", "t", "mean_c", "mean_rho", "min_c", "max_c", "kinetic_energy", "div_norm",
                     "limiter_iterations", "troubled")

# VTK_QUAD / VTK_HEXAHEDRON, vertices counter-clockwise (bottom face first in 3D)
_CELL_TYPE = {2: 9, 3: 12}
_QUAD = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]


def _vtk_vertices(dim: int) -> np.ndarray:
    if dim == 2:
        return np.array(_QUAD)
    return np.array([(x, y, z) for z in (0.0, 1.0) for x, y in _QUAD])


def write_vtk(state, mesh, path, title: str = "chns") -> None:
    """Write an ASCII legacy ``UNSTRUCTURED_GRID`` file.

    Cells carry the averages of ``c``, ``rho``, ``p`` and ``u``; points are
    not shared between cells, so the point data are the discontinuous vertex
    values of the same fields.
    """
    space = state.c.space
    dim = mesh.dim
    ref_v = _vtk_vertices(dim)
    table = space.ref.values(ref_v)
    nv = len(ref_v)
    n = mesh.n_elements
    pts = space.physical_points(ref_v).reshape(-1, dim)
    if dim == 2:
        pts = np.column_stack([pts, np.zeros(len(pts))])

    def fmt(a):
        return "\n".join(" ".join(f"{x:.17g}" for x in row) for row in np.atleast_2d(a)) + "\n"

    def vec3(a):
        a = np.asarray(a).T
        return a if dim == 3 else np.column_stack([a, np.zeros(len(a))])

    with open(path, "w") as fh:
        fh.write(f"# vtk DataFile Version 3.0\n{title} n={state.n} t={state.t!r}\nASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {len(pts)} double\n")
        fh.write(fmt(pts))
        conn = np.column_stack([np.full(n, nv), np.arange(n * nv).reshape(n, nv)])
        fh.write(f"CELLS {n} {n * (nv + 1)}\n")
        fh.write("\n".join(" ".join(map(str, row)) for row in conn) + "\n")
        fh.write(f"CELL_TYPES {n}\n")
        fh.write("\n".join([str(_CELL_TYPE[dim])] * n) + "\n")
        fh.write(f"CELL_DATA {n}\n")
        for name, f in (("c", state.c), ("rho", state.rho), ("p", state.p)):
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            fh.write(fmt(f.averages()[0][:, None]))
        fh.write("VECTORS u double\n")
        fh.write(fmt(vec3(state.u.averages())))
        fh.write(f"POINT_DATA {len(pts)}\n")
        for name, f in (("c_vertex", state.c), ("rho_vertex", state.rho), ("p_vertex", state.p)):
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            fh.write(fmt(f.values(table)[0].reshape(-1, 1)))
        fh.write("VECTORS u_vertex double\n")
        fh.write(fmt(vec3(state.u.values(table).reshape(dim, -1))))


def read_vtk_cell_data(path) -> dict[str, np.ndarray]:
    """Cell data arrays of a file written by :func:`write_vtk`."""
    with open(path) as fh:
        tokens = fh.read().split("\n")
    out = {}
    i = next(k for k, ln in enumerate(tokens) if ln.startswith("CELL_DATA"))
    n = int(tokens[i].split()[1])
    i += 1
    while i < len(tokens) and not tokens[i].startswith("POINT_DATA"):
        head = tokens[i].split()
        if head and head[0] == "SCALARS":
            out[head[1]] = np.array([float(v) for v in tokens[i + 2:i + 2 + n]])
            i += 2 + n
        elif head and head[0] == "VECTORS":
            out[head[1]] = np.array([[float(x) for x in ln.split()] for ln in tokens[i + 1:i + 1 + n]])
            i += 1 + n
        else:
            i += 1
    return out


class ObservableWriter:
    """Append-as-you-go CSV of observable records, header first."""

    def __init__(self, path, append: bool = False):
        self.path = path
        exists = append and os.path.exists(path)
        self._fh = open(path, "a" if exists else "w", newline="")
        self._w = csv.DictWriter(self._fh, fieldnames=OBSERVABLE_FIELDS, lineterminator="\n")
        if not exists:
            self._w.writeheader()

    def write(self, record: dict) -> None:
        self._w.writerow({k: _fmt(record.get(k, "")) for k in OBSERVABLE_FIELDS})
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_observables(records, path) -> None:
    with ObservableWriter(path) as w:
        for r in records:
            w.write(r)


def read_observables(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append({k: (int(v) if k in ("n", "limiter_iterations", "troubled") and v != "" else
                        float(v) if v != "" else None) for k, v in r.items()})
    return out
