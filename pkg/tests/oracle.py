"""Brute-force reference assembly used as a test oracle.

Everything here is written against ``numpy.polynomial.Legendre`` and plain
loops over elements, faces and global basis functions, independently of the
package's tables and block scatter.
"""

import itertools

import numpy as np
from numpy.polynomial import Legendre

NQ = 6


def gauss(n=NQ):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _leg(k):
    return np.sqrt(2 * k + 1) * Legendre.basis(k, domain=[0, 1])


class BruteBasis:
    """Global basis function ``(e, i)`` of the modal ``Q_r`` space."""

    def __init__(self, mesh, degree):
        self.mesh = mesh
        self.r = degree
        self.dim = mesh.dim
        self.modes = list(itertools.product(range(degree + 1), repeat=mesh.dim))
        self.nb = len(self.modes)
        self.p = [_leg(k) for k in range(degree + 1)]
        self.dp = [q.deriv() for q in self.p]

    @property
    def ndof(self):
        return self.mesh.n_elements * self.nb

    def local(self, e, x):
        """Reference coordinates of physical point(s) ``x`` in element ``e``."""
        return (np.atleast_2d(x) - self.mesh.cells[e] * self.mesh.h) / self.mesh.h

    def value(self, e, i, x):
        xi = self.local(e, x)
        out = np.ones(len(xi))
        for a, k in enumerate(self.modes[i]):
            out *= self.p[k](xi[:, a])
        return out

    def grad(self, e, i, x):
        xi = self.local(e, x)
        out = np.ones((len(xi), self.dim))
        for d in range(self.dim):
            for a, k in enumerate(self.modes[i]):
                out[:, d] *= (self.dp[k](xi[:, a]) / self.mesh.h) if a == d else self.p[k](xi[:, a])
        return out

    def cell_points(self, e, n=NQ):
        x, w = gauss(n)
        pts = np.array(list(itertools.product(x, repeat=self.dim)))
        wts = np.array([np.prod(c) for c in itertools.product(w, repeat=self.dim)])
        h = self.mesh.h
        return self.mesh.cells[e] * h + h * pts, wts * h ** self.dim

    def face_points(self, e, axis, side, n=NQ):
        """Points on the face of ``e`` with outward normal ``side * e_axis``."""
        x, w = gauss(n)
        d = self.dim
        pts = np.array(list(itertools.product(x, repeat=d - 1))).reshape(-1, d - 1)
        wts = np.array([np.prod(c) for c in itertools.product(w, repeat=d - 1)])
        full = np.empty((len(pts), d))
        others = [a for a in range(d) if a != axis]
        full[:, others] = pts
        full[:, axis] = 0.0 if side < 0 else 1.0
        h = self.mesh.h
        return self.mesh.cells[e] * h + h * full, wts * h ** (d - 1)


def _dofs(B):
    return [(e, i) for e in range(B.mesh.n_elements) for i in range(B.nb)]


def sipg_matrix(mesh, degree, sigma, dirichlet_tags=(), sigma_b=None, nonsymmetric=False):
    """Dense interior penalty matrix ``A[test, trial]``.

    ``nonsymmetric`` flips the sign of the symmetry term (the a_ellip form).
    """
    B = BruteBasis(mesh, degree)
    h = mesh.h
    sb = sigma if sigma_b is None else sigma_b
    sym = 1.0 if nonsymmetric else -1.0
    dofs = _dofs(B)
    A = np.zeros((B.ndof, B.ndof))
    idx = {d: k for k, d in enumerate(dofs)}
    for e in range(mesh.n_elements):
        X, W = B.cell_points(e)
        for i in range(B.nb):
            for j in range(B.nb):
                A[idx[e, i], idx[e, j]] += np.sum(W * np.sum(B.grad(e, i, X) * B.grad(e, j, X), axis=1))
    for f in range(mesh.n_interior_faces):
        em, ep, a = int(mesh.if_minus[f]), int(mesh.if_plus[f]), int(mesh.if_axis[f])
        X, W = B.face_points(em, a, +1)
        # traces of every basis function living on either side
        loc = [(em, i, 1.0) for i in range(B.nb)] + [(ep, i, -1.0) for i in range(B.nb)]
        for (et, it, st) in loc:
            vt = B.value(et, it, X)
            gt = B.grad(et, it, X)[:, a]
            for (es, is_, ss) in loc:
                vs = B.value(es, is_, X)
                gs = B.grad(es, is_, X)[:, a]
                # jump = minus - plus, so the jump of a single-side function is s * trace
                val = (-np.sum(W * 0.5 * gs * st * vt) + sym * np.sum(W * 0.5 * gt * ss * vs)
                       + sigma / h * np.sum(W * st * vt * ss * vs))
                A[idx[et, it], idx[es, is_]] += val
    for f in range(mesh.n_boundary_faces):
        if int(mesh.bf_tag[f]) not in [int(t) for t in dirichlet_tags]:
            continue
        e, a, s = int(mesh.bf_elem[f]), int(mesh.bf_axis[f]), int(mesh.bf_side[f])
        X, W = B.face_points(e, a, s)
        for i in range(B.nb):
            for j in range(B.nb):
                vi, vj = B.value(e, i, X), B.value(e, j, X)
                gi, gj = s * B.grad(e, i, X)[:, a], s * B.grad(e, j, X)[:, a]
                A[idx[e, i], idx[e, j]] += (-np.sum(W * gj * vi) + sym * np.sum(W * gi * vj)
                                            + sb / h * np.sum(W * vi * vj))
    return A


def upwind_matrix(mesh, degree, vel, outflow_tags=()):
    """Dense ``-(xi, v.grad chi) + (xi^up {v.n}, [chi])`` for a constant velocity ``vel``."""
    B = BruteBasis(mesh, degree)
    vel = np.asarray(vel, dtype=float)
    dofs = _dofs(B)
    idx = {d: k for k, d in enumerate(dofs)}
    A = np.zeros((B.ndof, B.ndof))
    for e in range(mesh.n_elements):
        X, W = B.cell_points(e)
        for i in range(B.nb):
            for j in range(B.nb):
                A[idx[e, i], idx[e, j]] -= np.sum(W * B.value(e, j, X) * (B.grad(e, i, X) @ vel))
    for f in range(mesh.n_interior_faces):
        em, ep, a = int(mesh.if_minus[f]), int(mesh.if_plus[f]), int(mesh.if_axis[f])
        X, W = B.face_points(em, a, +1)
        vn = vel[a]
        up = em if vn >= 0 else ep
        for (et, st) in ((em, 1.0), (ep, -1.0)):
            for i in range(B.nb):
                for j in range(B.nb):
                    A[idx[et, i], idx[up, j]] += np.sum(W * vn * B.value(up, j, X) * st * B.value(et, i, X))
    for f in range(mesh.n_boundary_faces):
        if int(mesh.bf_tag[f]) not in [int(t) for t in outflow_tags]:
            continue
        e, a, s = int(mesh.bf_elem[f]), int(mesh.bf_axis[f]), int(mesh.bf_side[f])
        X, W = B.face_points(e, a, s)
        for i in range(B.nb):
            for j in range(B.nb):
                A[idx[e, i], idx[e, j]] += np.sum(W * s * vel[a] * B.value(e, i, X) * B.value(e, j, X))
    return A


def l2_error(field, exact, n=NQ):
    """``||field - exact||_{L2}`` by brute-force quadrature over every element."""
    B = BruteBasis(field.space.mesh, field.space.degree)
    err = 0.0
    for e in range(B.mesh.n_elements):
        X, W = B.cell_points(e, n)
        uh = sum(field.coeffs[0, e, i] * B.value(e, i, X) for i in range(B.nb))
        err += np.sum(W * (uh - exact(X)) ** 2)
    return np.sqrt(err)


def reaction_matrix_unit_density(mesh, degree, vel, inflow_tags=()):
    """Dense ``a_reac`` for ``rho = 1`` and a constant velocity ``vel``.

    Then ``div v = 0`` and ``[v.n] = 0`` inside, so only the convective
    volume term, the upwind jump term on the downstream side of every
    interior face and ``-1/2 (v.n z, theta)`` on inflow faces remain.
    """
    B = BruteBasis(mesh, degree)
    vel = np.asarray(vel, dtype=float)
    idx = {d: k for k, d in enumerate(_dofs(B))}
    A = np.zeros((B.ndof, B.ndof))
    for e in range(mesh.n_elements):
        X, W = B.cell_points(e)
        for i in range(B.nb):
            for j in range(B.nb):
                A[idx[e, i], idx[e, j]] += np.sum(W * (B.grad(e, j, X) @ vel) * B.value(e, i, X))
    for f in range(mesh.n_interior_faces):
        em, ep, a = int(mesh.if_minus[f]), int(mesh.if_plus[f]), int(mesh.if_axis[f])
        X, W = B.face_points(em, a, +1)
        vn = vel[a]
        if vn == 0:
            continue
        down, up = (ep, em) if vn > 0 else (em, ep)
        for i in range(B.nb):
            for j in range(B.nb):
                ti = B.value(down, i, X)
                A[idx[down, i], idx[down, j]] += np.sum(W * abs(vn) * B.value(down, j, X) * ti)
                A[idx[down, i], idx[up, j]] -= np.sum(W * abs(vn) * B.value(up, j, X) * ti)
    for f in range(mesh.n_boundary_faces):
        if int(mesh.bf_tag[f]) not in [int(t) for t in inflow_tags]:
            continue
        e, a, s = int(mesh.bf_elem[f]), int(mesh.bf_axis[f]), int(mesh.bf_side[f])
        X, W = B.face_points(e, a, s)
        for i in range(B.nb):
            for j in range(B.nb):
                A[idx[e, i], idx[e, j]] -= 0.5 * np.sum(W * s * vel[a] * B.value(e, i, X) * B.value(e, j, X))
    return A
