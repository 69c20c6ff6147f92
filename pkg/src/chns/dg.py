"""Tensor-product modal DG spaces on voxel meshes.

The basis on the reference cell ``[0, 1]^dim`` is the product of the shifted,
orthonormal Legendre polynomials ``sqrt(2k+1) P_k(2 xi - 1)``.  Because the
constant mode equals one and all other modes have zero mean, the first
coefficient of every element *is* the cell average, and the element mass
matrix is ``h^dim`` times the identity.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache
import itertools

import numpy as np
from numpy.polynomial import legendre as npleg

from .mesh import VoxelMesh


@lru_cache(maxsize=None)
def gauss_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """``n``-point Gauss-Legendre rule on ``[0, 1]`` (exact to degree ``2n - 1``)."""
    x, w = npleg.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def tensor_rule(n: int, dim: int) -> tuple[np.ndarray, np.ndarray]:
    if dim == 0:
        return np.zeros((1, 0)), np.ones(1)
    x, w = gauss_rule(n)
    pts = np.array(list(itertools.product(x, repeat=dim)))
    wts = np.array([np.prod(c) for c in itertools.product(w, repeat=dim)])
    return pts, wts


def legendre_1d(k: int, xi) -> np.ndarray:
    c = np.zeros(k + 1)
    c[k] = 1.0
    return np.sqrt(2 * k + 1) * npleg.legval(2.0 * np.asarray(xi) - 1.0, c)


def legendre_1d_deriv(k: int, xi) -> np.ndarray:
    c = np.zeros(k + 1)
    c[k] = 1.0
    return 2.0 * np.sqrt(2 * k + 1) * npleg.legval(2.0 * np.asarray(xi) - 1.0, npleg.legder(c))


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray


class ReferenceBasis:
    """Modal ``Q_r`` basis on ``[0, 1]^dim``."""

    def __init__(self, dim: int, degree: int):
        if degree not in (1, 2):
            raise ValueError("only degrees 1 and 2 are supported")
        self.dim = dim
        self.degree = degree
        self.modes = np.array(list(itertools.product(range(degree + 1), repeat=dim)))
        self.nb = len(self.modes)
        total = self.modes.sum(axis=1)
        self.linear_modes = np.flatnonzero(total <= 1)
        # index of the mode with degree one along each axis
        self.axis_modes = np.array([
            int(np.flatnonzero((self.modes == np.eye(dim, dtype=int)[a]).all(axis=1))[0])
            for a in range(dim)
        ])

    def values(self, pts) -> np.ndarray:
        """Basis values at reference points, shape ``(npts, nb)``."""
        pts = np.atleast_2d(pts)
        out = np.ones((len(pts), self.nb))
        for a in range(self.dim):
            tab = np.stack([legendre_1d(k, pts[:, a]) for k in range(self.degree + 1)], axis=1)
            out *= tab[:, self.modes[:, a]]
        return out

    def gradients(self, pts) -> np.ndarray:
        """Reference-coordinate gradients, shape ``(npts, nb, dim)``."""
        pts = np.atleast_2d(pts)
        vals = [np.stack([legendre_1d(k, pts[:, a]) for k in range(self.degree + 1)], axis=1)
                for a in range(self.dim)]
        ders = [np.stack([legendre_1d_deriv(k, pts[:, a]) for k in range(self.degree + 1)], axis=1)
                for a in range(self.dim)]
        out = np.ones((len(pts), self.nb, self.dim))
        for d in range(self.dim):
            for a in range(self.dim):
                tab = ders[a] if a == d else vals[a]
                out[:, :, d] *= tab[:, self.modes[:, a]]
        return out

    @cached_property
    def derivative_matrices(self) -> np.ndarray:
        """``D[a]`` maps coefficients of ``f`` to coefficients of ``d f / d xi_a``."""
        pts, w = tensor_rule(self.degree + 1, self.dim)
        V = self.values(pts)
        G = self.gradients(pts)
        return np.einsum("q,qi,qjd->dij", w, V, G)

    @cached_property
    def vertices(self) -> np.ndarray:
        return np.array(list(itertools.product((0.0, 1.0), repeat=self.dim)))

    def face_points(self, axis: int, side: int, pts_face: np.ndarray) -> np.ndarray:
        """Embed ``(d-1)``-dimensional face points into the reference cell."""
        out = np.empty((len(pts_face), self.dim))
        others = [a for a in range(self.dim) if a != axis]
        out[:, others] = pts_face
        out[:, axis] = 0.0 if side < 0 else 1.0
        return out


class DGSpace:
    """Broken ``Q_r`` space on a voxel mesh with cached quadrature tables.

    ``standard`` rules use ``r+1`` Gauss points per axis (exact to ``2r+1``);
    ``rich`` rules use ``2r+1`` points and serve the weighted and nonlinear
    integrands (cubic potential, density-weighted terms, capillary forcing).
    """

    def __init__(self, mesh: VoxelMesh, degree: int):
        self.mesh = mesh
        self.degree = degree
        self.dim = mesh.dim
        self.ref = ReferenceBasis(mesh.dim, degree)
        self.nb = self.ref.nb
        self.h = mesh.h
        self.n_el = mesh.n_elements
        self.ndof = self.n_el * self.nb
        self.n_std = degree + 1
        self.n_rich = 2 * degree + 1

    # -- volume tables -----------------------------------------------------
    @lru_cache(maxsize=None)
    def volume_rule(self, n: int) -> QuadratureRule:
        return QuadratureRule(*tensor_rule(n, self.dim))

    @lru_cache(maxsize=None)
    def volume_tables(self, n: int):
        """(points, weights, values, physical gradients) for the ``n``-point rule."""
        rule = self.volume_rule(n)
        V = self.ref.values(rule.points)
        G = self.ref.gradients(rule.points) / self.h
        return rule.points, rule.weights, V, G

    # -- face tables -------------------------------------------------------
    @lru_cache(maxsize=None)
    def face_rule(self, n: int) -> QuadratureRule:
        return QuadratureRule(*tensor_rule(n, self.dim - 1))

    @lru_cache(maxsize=None)
    def face_tables(self, axis: int, side: int, n: int):
        """Values and physical normal derivatives (``d/dx_axis``) on a cell face."""
        rule = self.face_rule(n)
        pts = self.ref.face_points(axis, side, rule.points)
        V = self.ref.values(pts)
        G = self.ref.gradients(pts) / self.h
        return pts, rule.weights, V, G

    @cached_property
    def check_points(self) -> np.ndarray:
        """Reference points where bounds are monitored: vertices, rich
        quadrature points and face midpoints."""
        pts = [self.ref.vertices, self.volume_rule(self.n_rich).points]
        for a in range(self.dim):
            for s in (-1, 1):
                pts.append(self.ref.face_points(a, s, np.full((1, self.dim - 1), 0.5)))
        return np.vstack(pts)

    @cached_property
    def check_values(self) -> np.ndarray:
        return self.ref.values(self.check_points)

    @cached_property
    def vertex_values(self) -> np.ndarray:
        return self.ref.values(self.ref.vertices)

    def physical_points(self, ref_pts: np.ndarray) -> np.ndarray:
        """Physical coordinates, shape ``(n_el, npts, dim)``."""
        return self.mesh.origins[:, None, :] + self.h * ref_pts[None, :, :]

    # -- fields ------------------------------------------------------------
    def zeros(self, ncomp: int = 1) -> "DGField":
        return DGField(self, np.zeros((ncomp, self.n_el, self.nb)))

    def constant(self, value, ncomp: int = 1) -> "DGField":
        f = self.zeros(ncomp)
        f.coeffs[:, :, 0] = np.reshape(value, (-1, 1)) if np.ndim(value) else value
        return f

    def from_vector(self, x, ncomp: int = 1) -> "DGField":
        return DGField(self, np.asarray(x, dtype=float).reshape(ncomp, self.n_el, self.nb).copy())

    def from_averages(self, avg) -> "DGField":
        f = self.zeros(1)
        f.coeffs[0, :, 0] = avg
        return f

    def project(self, func, ncomp: int = 1, n: int | None = None) -> "DGField":
        """Element-wise L2 projection of ``func``.

        ``func`` receives physical points of shape ``(npts, dim)`` and returns
        ``(npts,)`` for scalars or ``(npts, ncomp)`` for vectors.
        """
        n = self.n_rich if n is None else n
        pts, w, V, _ = self.volume_tables(n)
        X = self.physical_points(pts).reshape(-1, self.dim)
        vals = np.asarray(func(X), dtype=float).reshape(self.n_el, len(w), -1)
        if vals.shape[-1] != ncomp:
            raise ValueError(f"function returned {vals.shape[-1]} components, expected {ncomp}")
        coeffs = np.einsum("q,qi,eqc->cei", w, V, vals)
        return DGField(self, coeffs)


def project_l2(func, mesh: VoxelMesh, degree: int, ncomp: int = 1) -> "DGField":
    return DGSpace(mesh, degree).project(func, ncomp)


@dataclass
class DGField:
    space: DGSpace
    coeffs: np.ndarray  # (ncomp, n_el, nb)

    @property
    def ncomp(self) -> int:
        return self.coeffs.shape[0]

    @property
    def vector(self) -> np.ndarray:
        """Flat component-major coefficient vector (a view when possible)."""
        return self.coeffs.reshape(-1)

    def copy(self) -> "DGField":
        return DGField(self.space, self.coeffs.copy())

    def averages(self) -> np.ndarray:
        """Cell averages, shape ``(ncomp, n_el)``."""
        return self.coeffs[:, :, 0].copy()

    def cell_average(self, elem: int, comp: int = 0) -> float:
        return float(self.coeffs[comp, elem, 0])

    def values(self, table: np.ndarray) -> np.ndarray:
        """Values at points given by a basis table ``(npts, nb)``: ``(ncomp, n_el, npts)``."""
        return np.einsum("cei,qi->ceq", self.coeffs, table)

    def eval(self, elem: int, point) -> np.ndarray | float:
        """Evaluate on element ``elem`` at a reference point in ``[0, 1]^dim``."""
        if not 0 <= elem < self.space.n_el:
            raise IndexError(f"element {elem} out of range")
        phi = self.space.ref.values(np.asarray(point, dtype=float).reshape(1, -1))[0]
        out = self.coeffs[:, elem, :] @ phi
        return float(out[0]) if self.ncomp == 1 else out

    def gradient(self) -> "DGField":
        """Broken gradient; component ``c*dim + a`` is ``d(comp c)/dx_a``."""
        D = self.space.ref.derivative_matrices / self.space.h
        g = np.einsum("aij,cej->caei", D, self.coeffs)
        return DGField(self.space, g.reshape(self.ncomp * self.space.dim, self.space.n_el, -1))

    def divergence(self) -> "DGField":
        if self.ncomp != self.space.dim:
            raise ValueError("divergence needs a vector field")
        D = self.space.ref.derivative_matrices / self.space.h
        d = np.einsum("aij,aej->ei", D, self.coeffs)
        return DGField(self.space, d[None])

    def face_trace(self, face: int, side: str, point, boundary: bool = False):
        """Trace on an interior face (``side`` in {'minus', 'plus'}) or, with
        ``boundary=True``, on a boundary face (``side`` ignored).  ``point`` is
        the ``(dim-1)``-dimensional reference coordinate on the face."""
        m = self.space.mesh
        pf = np.asarray(point, dtype=float).reshape(1, -1)
        if boundary:
            elem, axis, s = m.bf_elem[face], int(m.bf_axis[face]), int(m.bf_side[face])
        else:
            axis = int(m.if_axis[face])
            if side == "minus":
                elem, s = m.if_minus[face], 1
            elif side == "plus":
                elem, s = m.if_plus[face], -1
            else:
                raise ValueError("side must be 'minus' or 'plus'")
        return self.eval(int(elem), self.space.ref.face_points(axis, s, pf)[0])

    def avg_jump(self, face: int, point, boundary: bool = False):
        """``({chi}, [[chi]])`` at a face point; on boundary faces both are the trace."""
        if boundary:
            t = self.face_trace(face, None, point, boundary=True)
            return t, t
        a = self.face_trace(face, "minus", point)
        b = self.face_trace(face, "plus", point)
        return 0.5 * (a + b), a - b

    def two_sided_trace(self, face: int, point):
        m = self.space.mesh
        if face >= m.n_interior_faces:
            raise IndexError("two-sided trace requested on a non-interior face")
        return self.face_trace(face, "minus", point), self.face_trace(face, "plus", point)

    def extrema(self) -> tuple[float, float]:
        """Min/max over vertices, rich quadrature points and face midpoints."""
        v = self.values(self.space.check_values)
        return float(v.min()), float(v.max())
