"""Two droplets of phase A touch, merge and round up into a single drop.

Connected components of {c > 0} are counted on the cell averages, and the
merged drop's roundness is tracked by the isoperimetric ratio 4 pi A / P^2
(1 for a disk).  VTK snapshots go to ``output/droplet_demo`` for ParaView.

    python demos/droplet_merge.py [steps]
"""

import math
import os
import sys

import numpy as np
from scipy import ndimage

from chns.config import load_config
from chns.io import write_vtk
from chns.scenarios import build_scenario
from chns.stepper import Stepper

CFG = os.path.join(os.path.dirname(__file__), os.pardir, "configs", "droplets.cfg")
OUT = os.path.join("output", "droplet_demo")


def grid(state):
    mesh = state.c.space.mesh
    g = np.full(mesh.cells.max(axis=0) + 1, -1.0)
    g[tuple(mesh.cells.T)] = state.c.averages()[0]
    return g


def roundness(g):
    try:
        from skimage import measure
    except ImportError:
        return float("nan")
    c = max(measure.find_contours(np.pad(g, 1, constant_values=-1.0), 0.0), key=len)
    x, y = c[:, 0], c[:, 1]
    area = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
    perim = np.sum(np.hypot(np.diff(x, append=x[:1]), np.diff(y, append=y[:1])))
    return 4 * math.pi * area / perim ** 2


def main(steps=400):
    os.makedirs(OUT, exist_ok=True)
    cfg = load_config(CFG)
    sc = build_scenario(cfg)
    st = Stepper(sc.space, cfg.scheme(sc.params))
    state = st.initialize(sc.c0)
    print(f"{'step':>5} {'drops':>5} {'ratio':>6} {'kinetic':>10} {'mean c':>18}")
    while state.n <= steps:
        if state.n % 50 == 0 or state.n < 6:
            g = grid(state)
            obs = st.observables(state)
            print(f"{state.n:5d} {ndimage.label(g > 0)[1]:5d} {roundness(g):6.3f} {obs['kinetic_energy']:10.3e} "
                  f"{obs['mean_c']:18.15f}")
            if state.n % 100 == 0:
                write_vtk(state, sc.mesh, os.path.join(OUT, f"droplets_{state.n:05d}.vtk"))
        if state.n == steps:
            break
        state = st.advance(state)


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 400)
