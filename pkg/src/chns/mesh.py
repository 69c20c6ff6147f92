"""Uniform voxel meshes built from boolean geometry masks.

Cell ``(i, j[, k])`` of the lattice occupies ``[i h, (i+1) h] x [j h, (j+1) h] ...``.
Active cells are numbered densely in C order of the lattice index, so the
neighbour of a cell in the ``+axis`` direction always has the larger index and
every interior face normal ``+e_axis`` points from the lower-numbered cell into
the higher-numbered one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
import re

import numpy as np


class GeometryError(ValueError):
    pass


class SpecError(ValueError):
    pass


class Tag(IntEnum):
    WALL = 0
    INFLOW = 1
    OUTFLOW = 2


AXES = "xyz"


@dataclass(frozen=True)
class PlaneSelector:
    """Axis-aligned plane ``x_axis == value`` used to select boundary faces."""

    axis: int
    value: float

    @classmethod
    def parse(cls, text: str) -> "PlaneSelector":
        m = re.fullmatch(r"\s*([xyz])\s*=\s*([-+0-9.eE]+)\s*", text)
        if m is None:
            raise SpecError(f"cannot parse plane selector {text!r}; expected e.g. 'x=0'")
        return cls(AXES.index(m.group(1)), float(m.group(2)))

    def __str__(self):
        return f"{AXES[self.axis]}={self.value!r}"


@dataclass(frozen=True)
class BoundarySpec:
    inflow: tuple[PlaneSelector, ...] = ()
    outflow: tuple[PlaneSelector, ...] = ()


@dataclass(frozen=True, eq=False)
class VoxelMesh:
    dim: int
    shape: tuple[int, ...]
    h: float
    active: np.ndarray
    # per element lattice index, shape (n_el, dim)
    cells: np.ndarray
    # lattice -> element index (-1 for inactive)
    index: np.ndarray
    # interior faces: E_minus < E_plus, normal +e_axis
    if_minus: np.ndarray
    if_plus: np.ndarray
    if_axis: np.ndarray
    # boundary faces: element, axis, side (-1 / +1 = outward normal sign), tag
    bf_elem: np.ndarray
    bf_axis: np.ndarray
    bf_side: np.ndarray
    bf_tag: np.ndarray = field(default=None)

    @property
    def n_elements(self) -> int:
        return len(self.cells)

    @property
    def n_interior_faces(self) -> int:
        return len(self.if_minus)

    @property
    def n_boundary_faces(self) -> int:
        return len(self.bf_elem)

    @property
    def cell_volume(self) -> float:
        return self.h ** self.dim

    @property
    def face_area(self) -> float:
        return self.h ** (self.dim - 1)

    @property
    def volume(self) -> float:
        return self.n_elements * self.cell_volume

    @property
    def origins(self) -> np.ndarray:
        """Lower corner of every element, shape ``(n_el, dim)``."""
        return self.cells * self.h

    @property
    def closed(self) -> bool:
        return not np.any(self.bf_tag != Tag.WALL)

    def interior_face_normal(self, f: int) -> np.ndarray:
        n = np.zeros(self.dim)
        n[self.if_axis[f]] = 1.0
        return n

    def boundary_face_normal(self, f: int) -> np.ndarray:
        n = np.zeros(self.dim)
        n[self.bf_axis[f]] = float(self.bf_side[f])
        return n

    def neighbor(self, elem: int, axis: int, side: int) -> int:
        """Element across the face of ``elem`` with outward normal ``side * e_axis``; -1 if none."""
        idx = list(self.cells[elem])
        idx[axis] += side
        if not 0 <= idx[axis] < self.shape[axis]:
            return -1
        return int(self.index[tuple(idx)])

    def tag_counts(self) -> dict[str, int]:
        return {t.name.lower(): int(np.sum(self.bf_tag == t)) for t in Tag}

    def with_tags(self, tags: np.ndarray) -> "VoxelMesh":
        return VoxelMesh(self.dim, self.shape, self.h, self.active, self.cells, self.index,
                         self.if_minus, self.if_plus, self.if_axis,
                         self.bf_elem, self.bf_axis, self.bf_side, np.asarray(tags, dtype=np.int8))


def face_measure(mesh: VoxelMesh, face=None) -> float:
    # all faces of a uniform voxel mesh are congruent
    return mesh.h ** (mesh.dim - 1)


def build_voxel_mesh(mask, dim: int | None = None, h: float = 1.0) -> VoxelMesh:
    """Build the mesh of active cells of ``mask``; every boundary face starts as a wall."""
    active = np.asarray(mask, dtype=bool)
    if dim is None:
        dim = active.ndim
    if active.ndim != dim or dim not in (2, 3):
        raise GeometryError(f"mask has {active.ndim} axes but dim={dim}")
    if active.size == 0 or not active.any():
        raise GeometryError("geometry mask has no active cells")
    if not h > 0:
        raise GeometryError("cell size h must be positive")

    cells = np.argwhere(active)
    index = -np.ones(active.shape, dtype=np.int64)
    index[active] = np.arange(len(cells))

    if_minus, if_plus, if_axis = [], [], []
    bf_elem, bf_axis, bf_side = [], [], []
    for axis in range(dim):
        lo = [slice(None)] * dim
        hi = [slice(None)] * dim
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        a, b = active[tuple(lo)], active[tuple(hi)]
        both = a & b
        if_minus.append(index[tuple(lo)][both])
        if_plus.append(index[tuple(hi)][both])
        if_axis.append(np.full(int(both.sum()), axis))

        # boundary faces: active cell whose neighbour along the axis is absent
        pad = [(0, 0)] * dim
        pad[axis] = (1, 1)
        padded = np.pad(active, pad)
        sl_prev = [slice(None)] * dim
        sl_next = [slice(None)] * dim
        sl_prev[axis] = slice(0, -2)
        sl_next[axis] = slice(2, None)
        for side, nb in ((-1, padded[tuple(sl_prev)]), (+1, padded[tuple(sl_next)])):
            sel = active & ~nb
            bf_elem.append(index[sel])
            bf_axis.append(np.full(int(sel.sum()), axis))
            bf_side.append(np.full(int(sel.sum()), side))

    def cat(parts, dtype):
        return np.concatenate(parts).astype(dtype)

    bf_elem_a = cat(bf_elem, np.int64)
    order = np.lexsort((cat(bf_side, np.int8), cat(bf_axis, np.int8), bf_elem_a))
    return VoxelMesh(
        dim=dim, shape=tuple(active.shape), h=float(h), active=active, cells=cells, index=index,
        if_minus=cat(if_minus, np.int64), if_plus=cat(if_plus, np.int64), if_axis=cat(if_axis, np.int8),
        bf_elem=bf_elem_a[order], bf_axis=cat(bf_axis, np.int8)[order],
        bf_side=cat(bf_side, np.int8)[order],
        bf_tag=np.zeros(len(bf_elem_a), dtype=np.int8),
    )


def _select(mesh: VoxelMesh, plane: PlaneSelector) -> np.ndarray:
    if plane.axis >= mesh.dim:
        raise SpecError(f"plane {plane} refers to an axis beyond dim={mesh.dim}")
    k = plane.value / mesh.h
    kr = round(k)
    if abs(k - kr) > 1e-9 * max(1.0, abs(k)):
        raise SpecError(f"plane {plane} does not coincide with a lattice plane")
    # faces lying on the plane that separate two active cells cannot be boundary faces
    on_interior = (mesh.if_axis == plane.axis) & (mesh.cells[mesh.if_plus, plane.axis] == kr)
    if np.any(on_interior):
        raise SpecError(f"plane {plane} cuts through {int(on_interior.sum())} interior faces")
    face_coord = mesh.cells[mesh.bf_elem, mesh.bf_axis] + (mesh.bf_side > 0)
    return (mesh.bf_axis == plane.axis) & (face_coord == kr)


def classify_boundary(mesh: VoxelMesh, spec: BoundarySpec) -> VoxelMesh:
    """Tag boundary faces: inflow/outflow by plane selectors, wall otherwise."""
    tags = np.full(mesh.n_boundary_faces, Tag.WALL, dtype=np.int8)
    inflow = np.zeros(mesh.n_boundary_faces, dtype=bool)
    for plane in spec.inflow:
        inflow |= _select(mesh, plane)
    outflow = np.zeros_like(inflow)
    for plane in spec.outflow:
        outflow |= _select(mesh, plane)
    if np.any(inflow & outflow):
        raise SpecError("inflow and outflow selectors overlap")
    tags[inflow] = Tag.INFLOW
    tags[outflow] = Tag.OUTFLOW
    return mesh.with_tags(tags)


# ---------------------------------------------------------------------------
# analytic shapes

def _centers(shape, h):
    axes = [(np.arange(n) + 0.5) * h for n in shape]
    return np.meshgrid(*axes, indexing="ij")


def box_mask(shape) -> np.ndarray:
    return np.ones(tuple(shape), dtype=bool)


def torus_mask(n: int) -> np.ndarray:
    """Toroidal pipe in the unit cube sampled at cell centres of an ``n^3`` lattice."""
    x, y, z = _centers((n, n, n), 1.0 / n)
    return (np.sqrt((x - 0.5) ** 2 + (y - 0.5) ** 2) - 0.35) ** 2 + (z - 0.5) ** 2 < 0.15 ** 2


def annulus_mask(n: int) -> np.ndarray:
    """2D cross-section of the torus: the ring 0.2 < |x - c| < 0.5 in the unit square."""
    x, y = _centers((n, n), 1.0 / n)
    r = np.sqrt((x - 0.5) ** 2 + (y - 0.5) ** 2)
    return np.abs(r - 0.35) < 0.15


def microstructure_mask(n: int, buffer: int | None = None, dim: int = 2) -> np.ndarray:
    """Channel with a buffer column on the left followed by a periodic array of
    square obstacles; ``n`` cells per unit length, domain ``[0, 1 + buffer*h] x [0, 1]``.
    """
    if buffer is None:
        buffer = max(2, n // 8)
    nx = n + buffer
    shape = (nx, n) if dim == 2 else (nx, n, max(2, n // 4))
    mask = np.ones(shape, dtype=bool)
    x, y = _centers(shape[:2], 1.0 / n)
    xs = x - buffer / n
    period = 0.25
    px = np.mod(xs, period) / period
    py = np.mod(y, period) / period
    obstacle = (xs > 0) & (np.abs(px - 0.5) < 0.2) & (np.abs(py - 0.5) < 0.2)
    if dim == 2:
        mask[obstacle] = False
    else:
        mask[obstacle, :] = False
    return mask


# ---------------------------------------------------------------------------
# mask files

def read_mask(path) -> tuple[np.ndarray, float]:
    """Read an ASCII voxel mask file.

    Format: a header line ``dim nx ny [nz] h`` (``#`` lines are comments),
    followed by ``nx*ny[*nz]`` characters ``0``/``1`` (whitespace ignored) listing
    ``mask[ix, iy(, iz)]`` in row-major order, i.e. the last index varies fastest.
    """
    with open(path, "r") as fh:
        lines = [ln for ln in fh.read().splitlines() if not ln.lstrip().startswith("#")]
    if not lines:
        raise GeometryError(f"{path}: empty mask file")
    head = lines[0].split()
    try:
        dim = int(head[0])
        shape = tuple(int(v) for v in head[1:1 + dim])
        h = float(head[1 + dim])
    except (ValueError, IndexError) as exc:
        raise GeometryError(f"{path}: malformed header {lines[0]!r}") from exc
    if dim not in (2, 3) or len(head) != dim + 2:
        raise GeometryError(f"{path}: malformed header {lines[0]!r}")
    body = "".join("".join(lines[1:]).split())
    if len(body) != int(np.prod(shape)) or set(body) - {"0", "1"}:
        raise GeometryError(f"{path}: expected {int(np.prod(shape))} 0/1 characters, got {len(body)}")
    data = np.frombuffer(body.encode("ascii"), dtype=np.uint8) - ord("0")
    return data.reshape(shape).astype(bool), h


def write_mask(path, mask, h: float) -> None:
    mask = np.asarray(mask, dtype=bool)
    with open(path, "w") as fh:
        fh.write(" ".join([str(mask.ndim), *map(str, mask.shape), repr(float(h))]) + "\n")
        flat = "".join("1" if v else "0" for v in mask.ravel())
        row = mask.shape[-1]
        for i in range(0, len(flat), row):
            fh.write(flat[i:i + row] + "\n")
