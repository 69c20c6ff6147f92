"""Convergence of the interior penalty Poisson solver used for the pressure.

Every boundary face is tagged as outflow, so the outflow-style Nitsche terms
impose u = g weakly all around.  The L2 error of the Q_r solution against
a smooth exact solution drops like h^(r+1).

    python demos/sipg_convergence.py
"""

import math

import numpy as np
from scipy.sparse.linalg import spsolve

from chns.dg import DGSpace
from chns.forms import Forms
from chns.mesh import BoundarySpec, PlaneSelector, build_voxel_mesh, classify_boundary

SIGMA = 8.0


def exact(X):
    return np.sin(np.pi * X[:, 0]) * np.cos(2 * np.pi * X[:, 1]) + X[:, 0] * X[:, 1]


def source(X):
    return 5 * np.pi ** 2 * np.sin(np.pi * X[:, 0]) * np.cos(2 * np.pi * X[:, 1])


def solve(n, degree):
    walls = tuple(PlaneSelector(a, v) for a in (0, 1) for v in (0.0, 1.0))
    mesh = classify_boundary(build_voxel_mesh(np.ones((n, n), bool), h=1 / n), BoundarySpec(outflow=walls))
    s = DGSpace(mesh, degree)
    A = Forms(s).a_diff(SIGMA, "plus_outflow", SIGMA).tocsc()
    nq = degree + 3
    pts, w, V, _ = s.volume_tables(nq)
    X = s.physical_points(pts).reshape(-1, 2)
    b = mesh.cell_volume * np.einsum("q,eq,qi->ei", w, source(X).reshape(s.n_el, -1), V)
    for f in range(mesh.n_boundary_faces):
        e, a, side = int(mesh.bf_elem[f]), int(mesh.bf_axis[f]), int(mesh.bf_side[f])
        fp, fw, T, G = s.face_tables(a, side, nq)
        g = exact(mesh.origins[e] + mesh.h * fp)
        b[e] += mesh.h * np.einsum("q,q,qi->i", fw, g, -side * G[:, :, a] + SIGMA / mesh.h * T)
    u = s.from_vector(spsolve(A, b.ravel()))
    # L2 error with a rule finer than the solution's degree
    pts, w, V, _ = s.volume_tables(degree + 4)
    X = s.physical_points(pts).reshape(-1, 2)
    err = u.values(V)[0] - exact(X).reshape(s.n_el, -1)
    return math.sqrt(mesh.cell_volume * np.sum(w * err ** 2))


def main():
    for degree in (1, 2):
        print(f"\nQ{degree}")
        prev = None
        for n in (8, 16, 32, 64):
            e = solve(n, degree)
            rate = f"{math.log2(prev / e):5.2f}" if prev else "    -"
            print(f"  h = 1/{n:<3d} L2 error {e:.3e}  rate {rate}")
            prev = e


if __name__ == "__main__":
    main()
