"""Assembly of the DG bilinear forms and right-hand sides.

Matrices are indexed ``[test, trial]`` over the scalar dof numbering
``element * nb + mode``.  Vector-valued unknowns use component-major
numbering; every vector operator in the scheme acts identically on each
component, so only the scalar block is assembled.

Interior faces carry the normal ``+e_axis`` from the lower-numbered element
(``minus``) to the higher-numbered one (``plus``); the jump is
``minus - plus``.  Boundary face normals are outward.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
import math
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .dg import DGField, DGSpace
from .mesh import Tag
from .parallel import map_chunks


class DensityError(ArithmeticError):
    """Non-positive density at a quadrature point (upstream limiting failed)."""


@dataclass(frozen=True)
class PenaltySet:
    sigma_diff: float = 2.0
    sigma_diff_in: float = 4.0
    sigma_diff_out: float = 8.0
    sigma_ellip_interior: float = 8.0
    sigma_ellip_in: float = 32.0
    sigma_bvel: float = 32.0

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if not v > 0:
                raise ValueError(f"penalty {k} must be positive, got {v}")


@dataclass(frozen=True)
class ModelParams:
    Pe: float = 1.0
    Cn: float = 1.0 / 64
    Re: float = 1.0
    Ca: float = 0.1
    rho_A: float = 1200.0
    rho_B: float = 800.0
    rho_ref: float | None = None
    theta: float = 90.0
    delta: float | np.ndarray = 1.0
    c_D: float = 1.0
    v_D: Callable | None = field(default=None, compare=False)

    c_lower = -1.0
    c_upper = 1.0

    def __post_init__(self):
        if self.rho_ref is None:
            object.__setattr__(self, "rho_ref", min(self.rho_A, self.rho_B))
        for k in ("Pe", "Cn", "Re", "Ca", "rho_A", "rho_B", "rho_ref"):
            if not getattr(self, k) > 0:
                raise ValueError(f"{k} must be positive")

    def density(self, c):
        return 0.5 * (1.0 + c) * self.rho_A + 0.5 * (1.0 - c) * self.rho_B

    @property
    def wetting_coefficient(self) -> float:
        """``sqrt(2) cos(theta) / (2 Cn)``; multiply by delta per face."""
        # sin(90 - theta) is exactly zero for a neutral wall, cos(pi/2) is not
        return math.sqrt(2.0) * math.sin(math.radians(90.0 - self.theta)) / (2.0 * self.Cn)


def _wvv(W, A, B):
    """``sum_q W[f, q] A[q, i] B[q, j]`` as one matrix product, shape ``(f, i, j)``."""
    AB = (A[:, :, None] * B[:, None, :]).reshape(A.shape[0], -1)
    return (np.atleast_2d(W) @ AB).reshape(-1, A.shape[1], B.shape[1])


def phi_prime_plus(c):
    return c ** 3


def phi_prime_minus(c):
    return -c


class BlockPattern:
    """Sparsity of DG operators: element diagonal blocks plus one block per
    ordered pair of face neighbours.  Built once; ``to_csr`` only permutes."""

    def __init__(self, space: DGSpace):
        m = space.mesh
        nb = space.nb
        self.nb = nb
        n_el, n_if = m.n_elements, m.n_interior_faces
        self.n_slots = n_el + 2 * n_if
        # slot n_el + 2f is (minus, plus) of face f, slot n_el + 2f + 1 is (plus, minus)
        row_el = np.concatenate([np.arange(n_el), np.column_stack([m.if_minus, m.if_plus]).ravel()])
        col_el = np.concatenate([np.arange(n_el), np.column_stack([m.if_plus, m.if_minus]).ravel()])
        ii, jj = np.meshgrid(np.arange(nb), np.arange(nb), indexing="ij")
        rows = (row_el[:, None, None] * nb + ii[None]).ravel()
        cols = (col_el[:, None, None] * nb + jj[None]).ravel()
        n = space.ndof
        tag = sp.coo_matrix((np.arange(1, len(rows) + 1, dtype=float), (rows, cols)), shape=(n, n)).tocsr()
        tag.sort_indices()
        self.indptr = tag.indptr
        self.indices = tag.indices
        self.perm = tag.data.astype(np.int64) - 1
        self.shape = (n, n)
        self.n_el = n_el
        self.n_if = n_if

    def empty(self) -> np.ndarray:
        return np.zeros((self.n_slots, self.nb, self.nb))

    def to_csr(self, blocks: np.ndarray) -> sp.csr_matrix:
        data = blocks.reshape(-1)[self.perm]
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=self.shape)


class Forms:
    """Assembler for one DG space.  ``counts`` records how many times each
    operator was assembled."""

    def __init__(self, space: DGSpace):
        self.space = space
        self.mesh = space.mesh
        self.pattern = BlockPattern(space)
        self.counts: Counter = Counter()
        m = self.mesh
        self._if_groups = [np.flatnonzero(m.if_axis == a) for a in range(m.dim)]
        self._bf_groups = [(a, s, np.flatnonzero((m.bf_axis == a) & (m.bf_side == s)))
                           for a in range(m.dim) for s in (-1, 1)]
        self._off = m.n_elements

    # ------------------------------------------------------------------
    # helpers
    def _face_w(self, n):
        return self.space.face_rule(n).weights * self.mesh.face_area

    def _interior_tables(self, axis, n):
        _, _, Tm, Gm = self.space.face_tables(axis, +1, n)
        _, _, Tp, Gp = self.space.face_tables(axis, -1, n)
        return Tm, Gm[:, :, axis], Tp, Gp[:, :, axis]

    def _add_interior(self, blocks, idx, mm, mp, pm, pp):
        """Scatter per-face blocks (``[test, trial]``) for faces ``idx`` of one axis."""
        m = self.mesh
        if mm is not None:
            blocks[m.if_minus[idx]] += mm
        if pp is not None:
            blocks[m.if_plus[idx]] += pp
        if mp is not None:
            blocks[self._off + 2 * idx] += mp
        if pm is not None:
            blocks[self._off + 2 * idx + 1] += pm

    def _bf_select(self, tags):
        m = self.mesh
        for a, s, idx in self._bf_groups:
            sel = idx[np.isin(m.bf_tag[idx], tags)]
            if len(sel):
                yield a, s, sel

    def field_at_faces(self, f: DGField, axis: int, idx, n: int):
        """Traces of ``f`` from the minus and plus elements of interior faces."""
        _, _, Tm, _ = self.space.face_tables(axis, +1, n)
        _, _, Tp, _ = self.space.face_tables(axis, -1, n)
        m = self.mesh
        vm = np.einsum("cfi,qi->cfq", f.coeffs[:, m.if_minus[idx]], Tm)
        vp = np.einsum("cfi,qi->cfq", f.coeffs[:, m.if_plus[idx]], Tp)
        return vm, vp

    def boundary_trace(self, f: DGField, axis: int, side: int, idx, n: int, grad: bool = False):
        _, _, T, G = self.space.face_tables(axis, side, n)
        tab = G[:, :, axis] if grad else T
        return np.einsum("cfi,qi->cfq", f.coeffs[:, self.mesh.bf_elem[idx]], tab)

    def boundary_points(self, axis, side, idx, n):
        pts, _, _, _ = self.space.face_tables(axis, side, n)
        X = self.mesh.origins[self.mesh.bf_elem[idx]][:, None, :] + self.mesh.h * pts[None]
        return X

    def _volume_values(self, f: DGField, n: int, start=0, stop=None):
        _, _, V, _ = self.space.volume_tables(n)
        return np.einsum("cei,qi->ceq", f.coeffs[:, start:stop], V)

    # ------------------------------------------------------------------
    # constant operators
    def mass_matrix(self) -> sp.csr_matrix:
        return sp.identity(self.space.ndof, format="csr") * self.mesh.cell_volume

    def _stiffness_block(self):
        _, w, _, G = self.space.volume_tables(self.space.n_std)
        return self.mesh.cell_volume * np.einsum("q,qid,qjd->ij", w, G, G)

    def a_diff(self, sigma: float, variant: str = "interior", sigma_bdry: float | None = None) -> sp.csr_matrix:
        """Symmetric interior penalty form.  ``variant`` is ``interior``,
        ``plus_inflow`` or ``plus_outflow``; the latter two add weakly imposed
        Dirichlet terms on the tagged faces with penalty ``sigma_bdry``."""
        self.counts[f"a_diff:{variant}"] += 1
        sp_ = self.space
        h = self.mesh.h
        n = sp_.n_std
        w = self._face_w(n)
        blocks = self.pattern.empty()
        blocks[: self.mesh.n_elements] += self._stiffness_block()
        for a in range(self.mesh.dim):
            idx = self._if_groups[a]
            if not len(idx):
                continue
            Tm, Gm, Tp, Gp = self._interior_tables(a, n)
            tabs = {"m": (Tm, Gm, 1.0), "p": (Tp, Gp, -1.0)}
            out = {}
            for t in "mp":
                Tt, Gt, st = tabs[t]
                for s in "mp":
                    Ts, Gs, ss = tabs[s]
                    out[t + s] = (np.einsum("q,qj,qi->ij", w, -0.5 * Gs, st * Tt)
                                  + np.einsum("q,qi,qj->ij", w, -0.5 * Gt, ss * Ts)
                                  + (sigma / h) * st * ss * np.einsum("q,qi,qj->ij", w, Tt, Ts))
            self._add_interior(blocks, idx, out["mm"], out["mp"], out["pm"], out["pp"])
        if variant != "interior":
            tag = {"plus_inflow": Tag.INFLOW, "plus_outflow": Tag.OUTFLOW}[variant]
            sb = sigma if sigma_bdry is None else sigma_bdry
            for a, s, sel in self._bf_select([tag]):
                _, _, T, G = sp_.face_tables(a, s, n)
                Gn = s * G[:, :, a]
                B = (-np.einsum("q,qj,qi->ij", w, Gn, T) - np.einsum("q,qi,qj->ij", w, Gn, T)
                     + (sb / h) * np.einsum("q,qi,qj->ij", w, T, T))
                blocks[self.mesh.bf_elem[sel]] += B
        return self.pattern.to_csr(blocks)

    def a_ellip(self, sigma: float, sigma_bdry: float, dirichlet_tags=(Tag.INFLOW, Tag.WALL)) -> sp.csr_matrix:
        """Non-symmetric interior penalty form for one velocity component."""
        self.counts["a_ellip"] += 1
        sp_ = self.space
        h = self.mesh.h
        n = sp_.n_std
        w = self._face_w(n)
        blocks = self.pattern.empty()
        blocks[: self.mesh.n_elements] += self._stiffness_block()
        for a in range(self.mesh.dim):
            idx = self._if_groups[a]
            if not len(idx):
                continue
            Tm, Gm, Tp, Gp = self._interior_tables(a, n)
            tabs = {"m": (Tm, Gm, 1.0), "p": (Tp, Gp, -1.0)}
            out = {}
            for t in "mp":
                Tt, Gt, st = tabs[t]
                for s in "mp":
                    Ts, Gs, ss = tabs[s]
                    out[t + s] = (np.einsum("q,qj,qi->ij", w, -0.5 * Gs, st * Tt)
                                  + np.einsum("q,qi,qj->ij", w, 0.5 * Gt, ss * Ts)
                                  + (sigma / h) * st * ss * np.einsum("q,qi,qj->ij", w, Tt, Ts))
            self._add_interior(blocks, idx, out["mm"], out["mp"], out["pm"], out["pp"])
        for a, s, sel in self._bf_select(list(dirichlet_tags)):
            _, _, T, G = sp_.face_tables(a, s, n)
            Gn = s * G[:, :, a]
            B = (-np.einsum("q,qj,qi->ij", w, Gn, T) + np.einsum("q,qi,qj->ij", w, Gn, T)
                 + (sigma_bdry / h) * np.einsum("q,qi,qj->ij", w, T, T))
            blocks[self.mesh.bf_elem[sel]] += B
        return self.pattern.to_csr(blocks)

    def grad_div_blocks(self) -> np.ndarray:
        """Element matrix of ``(u, theta) + (div u, div theta)`` on the
        component-major local space, shape ``(dim*nb, dim*nb)``."""
        sp_ = self.space
        _, w, _, G = sp_.volume_tables(sp_.n_std)
        d, nb = sp_.dim, sp_.nb
        # div of component-c basis function j is G[:, j, c]
        Gf = np.concatenate([G[:, :, c] for c in range(d)], axis=1)
        K = self.mesh.cell_volume * np.einsum("q,qi,qj->ij", w, Gf, Gf)
        return self.mesh.cell_volume * np.eye(d * nb) + K

    def grad_div_matrix(self) -> sp.csr_matrix:
        B = self.grad_div_blocks()
        sp_ = self.space
        d, nb, n_el = sp_.dim, sp_.nb, sp_.n_el
        local = (np.arange(d)[:, None] * sp_.ndof + np.arange(nb)[None, :]).ravel()
        dofs = local[None, :] + (np.arange(n_el) * nb)[:, None]
        rows = np.repeat(dofs, d * nb, axis=1).ravel()
        cols = np.tile(dofs, (1, d * nb)).ravel()
        data = np.tile(B.ravel(), n_el)
        return sp.csr_matrix((data, (rows, cols)), shape=(d * sp_.ndof, d * sp_.ndof))

    def weak_gradient_matrices(self, boundary_tags=(Tag.WALL, Tag.INFLOW, Tag.OUTFLOW)) -> list:
        """Per component ``c`` the matrix of ``-(p, d_c theta) + ({p}, [theta] n_c)``,
        face terms over interior faces and boundary faces carrying one of
        ``boundary_tags`` (rows: component-``c`` test functions, columns:
        scalar trial functions).

        With every boundary face this is the pressure part of ``b_pres``.  Its
        negative transpose is the matching weak divergence
        ``(div_h v, chi) - ([v.n], {chi}) - (v.n, chi)_bdry``.  Leaving a face
        out treats ``p`` as zero there, as on a Dirichlet outflow.
        """
        sp_ = self.space
        m = self.mesh
        n = sp_.n_std
        _, w, V, G = sp_.volume_tables(n)
        wf = self._face_w(n)
        out = []
        for c in range(m.dim):
            blocks = self.pattern.empty()
            blocks[: m.n_elements] = -m.cell_volume * np.einsum("q,qi,qj->ij", w, G[:, :, c], V)
            idx = self._if_groups[c]
            if len(idx):
                Tm, _, Tp, _ = self._interior_tables(c, n)
                half = 0.5 * wf
                self._add_interior(blocks, idx,
                                   np.einsum("q,qi,qj->ij", half, Tm, Tm), np.einsum("q,qi,qj->ij", half, Tm, Tp),
                                   -np.einsum("q,qi,qj->ij", half, Tp, Tm), -np.einsum("q,qi,qj->ij", half, Tp, Tp))
            for a, s, sel in self._bf_select(list(boundary_tags)):
                if a != c:
                    continue
                _, _, T, _ = sp_.face_tables(a, s, n)
                np.add.at(blocks, m.bf_elem[sel], s * np.einsum("q,qi,qj->ij", wf, T, T))
            out.append(self.pattern.to_csr(blocks))
        self.counts["weak_gradient"] += 1
        return out

    # ------------------------------------------------------------------
    # field-dependent operators
    def weighted_mass(self, weight: DGField | np.ndarray | None = None, check_positive=False) -> sp.csr_matrix:
        """``(w xi, chi)``; ``weight`` is a scalar DG field or values at rich
        volume quadrature points (shape ``(n_el, nq)``)."""
        if weight is None:
            return self.mass_matrix()
        blocks = self.pattern.empty()
        blocks[: self.mesh.n_elements] = self.weighted_mass_blocks(weight, check_positive)
        return self.pattern.to_csr(blocks)

    def weighted_mass_blocks(self, weight, check_positive=False) -> np.ndarray:
        sp_ = self.space
        _, w, V, _ = sp_.volume_tables(sp_.n_rich)
        if isinstance(weight, DGField):
            wq = self._volume_values(weight, sp_.n_rich)[0]
        else:
            wq = np.asarray(weight)
        if check_positive and np.any(wq <= 0):
            raise DensityError("non-positive weight at a quadrature point")
        vol = self.mesh.cell_volume

        def chunk(a, b):
            return vol * _wvv(wq[a:b] * w, V, V)

        return map_chunks(chunk, self.mesh.n_elements)

    def a_adv(self, velocity: DGField, outflow: bool = True) -> sp.csr_matrix:
        """Upwind advection ``-(xi, v.grad chi) + (xi^up {v.n}, [chi])`` plus the
        one-sided outflow term ``(xi v.n, chi)`` on outflow faces."""
        self.counts["a_adv"] += 1
        sp_ = self.space
        nr = sp_.n_rich
        blocks = self.pattern.empty()
        _, w, V, G = sp_.volume_tables(nr)
        vq = self._volume_values(velocity, nr)  # (dim, n_el, nq)
        vol = self.mesh.cell_volume

        def chunk(a, b):
            vg = np.einsum("deq,qid->eqi", vq[:, a:b], G)
            return -vol * np.matmul((vg * w[:, None]).transpose(0, 2, 1), V)

        blocks[: self.mesh.n_elements] += map_chunks(chunk, self.mesh.n_elements)
        wf = self._face_w(nr)
        for a in range(self.mesh.dim):
            idx = self._if_groups[a]
            if not len(idx):
                continue
            Tm, _, Tp, _ = self._interior_tables(a, nr)
            vm, vp = self.field_at_faces(velocity, a, idx, nr)
            wn = 0.5 * (vm[a] + vp[a])  # {v}.n_e with n_e = +e_a
            up_m = wn >= 0
            fm = wf * wn * up_m
            fp = wf * wn * ~up_m
            # test sign: +1 on minus, -1 on plus
            mm = _wvv(fm, Tm, Tm)
            mp = _wvv(fp, Tm, Tp)
            pm = -_wvv(fm, Tp, Tm)
            pp = -_wvv(fp, Tp, Tp)
            self._add_interior(blocks, idx, mm, mp, pm, pp)
        if outflow:
            for a, s, sel in self._bf_select([Tag.OUTFLOW]):
                _, _, T, _ = sp_.face_tables(a, s, nr)
                vn = s * self.boundary_trace(velocity, a, s, sel, nr)[a]
                blocks[self.mesh.bf_elem[sel]] += _wvv(wf * vn, T, T)
        return self.pattern.to_csr(blocks)

    def a_reac(self, rho: DGField, v: DGField) -> sp.csr_matrix:
        """Density-weighted convective form acting on one velocity component."""
        self.counts["a_reac"] += 1
        sp_ = self.space
        m = self.mesh
        nr = sp_.n_rich
        blocks = self.pattern.empty()
        _, w, V, G = sp_.volume_tables(nr)
        vq = self._volume_values(v, nr)
        rq = self._volume_values(rho, nr)[0]
        grad_rho = self._volume_values(rho.gradient(), nr)
        div_v = self._volume_values(v.divergence(), nr)[0]
        vol = m.cell_volume

        def chunk(a, b):
            # (v.grad(rho z), theta) + 1/2 (div v, rho z theta)
            c0 = np.einsum("deq,deq->eq", vq[:, a:b], grad_rho[:, a:b]) + 0.5 * div_v[a:b] * rq[a:b]
            vg = np.einsum("deq,qjd->eqj", vq[:, a:b], G) * rq[a:b, :, None]
            return vol * (_wvv(c0 * w, V, V) + np.matmul(V.T, w[:, None] * vg))

        blocks[: m.n_elements] += map_chunks(chunk, m.n_elements)
        wf = self._face_w(nr)
        for a in range(m.dim):
            idx = self._if_groups[a]
            if not len(idx):
                continue
            Tm, _, Tp, _ = self._interior_tables(a, nr)
            vm, vp = self.field_at_faces(v, a, idx, nr)
            rm, rp = self.field_at_faces(rho, a, idx, nr)
            rm, rp = rm[0], rp[0]
            jump_vn = vm[a] - vp[a]
            wn = 0.5 * (vm[a] + vp[a])
            # -1/2 ([v.n], {rho z theta})
            mm = _wvv(wf * (-0.25 * jump_vn * rm), Tm, Tm)
            pp = _wvv(wf * (-0.25 * jump_vn * rp), Tp, Tp)
            # upwind: plus side receives where wn > 0, minus side where wn < 0
            pos = np.where(wn > 0, wn, 0.0)
            neg = np.where(wn < 0, -wn, 0.0)
            pp += _wvv(wf * pos * rp, Tp, Tp)
            pm = -_wvv(wf * pos * rm, Tp, Tm)
            mm += _wvv(wf * neg * rm, Tm, Tm)
            mp = -_wvv(wf * neg * rp, Tm, Tp)
            self._add_interior(blocks, idx, mm, mp, pm, pp)
        for a, s, sel in self._bf_select([Tag.INFLOW]):
            _, _, T, _ = sp_.face_tables(a, s, nr)
            vn = s * self.boundary_trace(v, a, s, sel, nr)[a]
            rb = self.boundary_trace(rho, a, s, sel, nr)[0]
            # exterior value equals the interior trace on the boundary: upwind term vanishes
            blocks[m.bf_elem[sel]] += _wvv(wf * (-0.5 * vn * rb), T, T)
        return self.pattern.to_csr(blocks)

    def weighted_a_diff(self, rho: DGField, sigma: float, sigma_out: float) -> sp.csr_matrix:
        """Interior penalty form for ``-div(k grad xi)`` with ``k = 1/rho``
        evaluated pointwise, Dirichlet terms on outflow faces, and penalty
        scaled by the face average of ``k``."""
        self.counts["weighted_a_diff"] += 1
        sp_ = self.space
        m = self.mesh
        h = m.h
        nr = sp_.n_rich
        blocks = self.pattern.empty()
        _, w, _, G = sp_.volume_tables(nr)
        kq = self._volume_values(rho, nr)[0]
        if np.any(kq <= 0):
            raise CoercivityError("variable-coefficient operator lost coercivity (k <= 0)")
        kq = 1.0 / kq
        blocks[: m.n_elements] += m.cell_volume * ((kq * w) @ np.einsum("qid,qjd->qij", G, G).reshape(len(w), -1)).reshape(-1, G.shape[1], G.shape[1])
        wf = self._face_w(nr)
        for a in range(m.dim):
            idx = self._if_groups[a]
            if not len(idx):
                continue
            Tm, Gm, Tp, Gp = self._interior_tables(a, nr)
            km, kp = self.field_at_faces(rho, a, idx, nr)
            km, kp = km[0], kp[0]
            if np.any(km <= 0) or np.any(kp <= 0):
                raise CoercivityError("variable-coefficient operator lost coercivity (k <= 0)")
            km, kp = 1.0 / km, 1.0 / kp
            kavg = 0.5 * (km + kp)
            tabs = {"m": (Tm, Gm, 1.0, km), "p": (Tp, Gp, -1.0, kp)}
            out = {}
            for t in "mp":
                Tt, Gt, st, kt = tabs[t]
                for s in "mp":
                    Ts, Gs, ss, ks = tabs[s]
                    out[t + s] = (_wvv(wf * (-0.5 * ks), st * Tt, Gs)
                                  + _wvv(wf * (-0.5 * kt), Gt, ss * Ts)
                                  + _wvv(wf * (sigma / h) * kavg * st * ss, Tt, Ts))
            self._add_interior(blocks, idx, out["mm"], out["mp"], out["pm"], out["pp"])
        for a, s, sel in self._bf_select([Tag.OUTFLOW]):
            _, _, T, Gb = sp_.face_tables(a, s, nr)
            Gn = s * Gb[:, :, a]
            kb = self.boundary_trace(rho, a, s, sel, nr)[0]
            if np.any(kb <= 0):
                raise CoercivityError("variable-coefficient operator lost coercivity (k <= 0)")
            kb = 1.0 / kb
            B = (-_wvv(wf * kb, T, Gn) - _wvv(wf * kb, Gn, T)
                 + _wvv(wf * kb * (sigma_out / h), T, T))
            blocks[m.bf_elem[sel]] += B
        return self.pattern.to_csr(blocks)

    # ------------------------------------------------------------------
    # nonlinear Cahn-Hilliard term
    def potential_term(self, c: DGField) -> np.ndarray:
        """``(Phi'_+(c), chi)`` as a flat vector."""
        sp_ = self.space
        _, w, V, _ = sp_.volume_tables(sp_.n_rich)
        cq = self._volume_values(c, sp_.n_rich)[0]
        return (self.mesh.cell_volume * np.einsum("q,eq,qi->ei", w, phi_prime_plus(cq), V)).ravel()

    def potential_jacobian(self, c: DGField) -> sp.csr_matrix:
        sp_ = self.space
        cq = self._volume_values(c, sp_.n_rich)[0]
        blocks = self.pattern.empty()
        blocks[: self.mesh.n_elements] = self.weighted_mass_blocks(3.0 * cq ** 2)
        return self.pattern.to_csr(blocks)

    # ------------------------------------------------------------------
    # right-hand sides (flat vectors over the scalar space, or (dim, ndof))
    def b_diff(self, xi: DGField, params: ModelParams, sigma_in: float) -> np.ndarray:
        sp_ = self.space
        m = self.mesh
        out = np.zeros((m.n_elements, sp_.nb))
        nr = sp_.n_rich
        wf = self._face_w(nr)
        for a, s, sel in self._bf_select([Tag.INFLOW]):
            _, _, T, G = sp_.face_tables(a, s, nr)
            cD = self._boundary_data(params.c_D, a, s, sel, nr)
            Gn = s * G[:, :, a]
            out_f = -np.einsum("fq,qi->fi", wf * cD, Gn) + (sigma_in / m.h) * np.einsum("fq,qi->fi", wf * cD, T)
            np.add.at(out, m.bf_elem[sel], out_f)
        coef = params.wetting_coefficient
        if coef != 0.0:
            delta = np.broadcast_to(np.asarray(params.delta, dtype=float), (m.n_boundary_faces,))
            for a, s, sel in self._bf_select([Tag.WALL, Tag.OUTFLOW]):
                _, _, T, _ = sp_.face_tables(a, s, nr)
                xb = self.boundary_trace(xi, a, s, sel, nr)[0]
                g = -coef * delta[sel][:, None] * (xb ** 2 - 1.0)
                np.add.at(out, m.bf_elem[sel], np.einsum("fq,qi->fi", wf * g, T))
        return out.ravel()

    def _boundary_data(self, data, a, s, sel, n):
        nq = len(self.space.face_rule(n).weights)
        if callable(data):
            X = self.boundary_points(a, s, sel, n)
            return np.asarray(data(X.reshape(-1, self.mesh.dim)), dtype=float).reshape(len(sel), nq)
        return np.full((len(sel), nq), float(data))

    def inflow_advection(self, u: DGField, c_D) -> np.ndarray:
        """``(c_D u.n, chi)`` over inflow faces."""
        sp_ = self.space
        m = self.mesh
        out = np.zeros((m.n_elements, sp_.nb))
        nr = sp_.n_rich
        wf = self._face_w(nr)
        for a, s, sel in self._bf_select([Tag.INFLOW]):
            _, _, T, _ = sp_.face_tables(a, s, nr)
            un = s * self.boundary_trace(u, a, s, sel, nr)[a]
            cD = self._boundary_data(c_D, a, s, sel, nr)
            np.add.at(out, m.bf_elem[sel], np.einsum("fq,qi->fi", wf * cD * un, T))
        return out.ravel()

    def inflow_flux(self, params: ModelParams) -> np.ndarray:
        """``(v_D.n, chi)`` over inflow faces."""
        sp_ = self.space
        m = self.mesh
        out = np.zeros((m.n_elements, sp_.nb))
        if params.v_D is None:
            return out.ravel()
        nr = sp_.n_rich
        wf = self._face_w(nr)
        for a, s, sel in self._bf_select([Tag.INFLOW]):
            _, _, T, _ = sp_.face_tables(a, s, nr)
            X = self.boundary_points(a, s, sel, nr)
            vD = np.asarray(params.v_D(X.reshape(-1, m.dim)), dtype=float).reshape(len(sel), -1, m.dim)
            np.add.at(out, m.bf_elem[sel], np.einsum("fq,qi->fi", wf * s * vD[:, :, a], T))
        return out.ravel()

    def b_pres(self, p: DGField, phi: DGField) -> np.ndarray:
        """``-(p, div theta) + ({p}, [theta.n])_{interior+boundary} + (grad phi, theta)``,
        returned with shape ``(dim, ndof)``."""
        sp_ = self.space
        m = self.mesh
        d = m.dim
        out = np.zeros((d, m.n_elements, sp_.nb))
        n = sp_.n_std
        _, w, V, G = sp_.volume_tables(n)
        pq = self._volume_values(p, n)[0]
        vol = m.cell_volume
        for c in range(d):
            out[c] -= vol * np.einsum("q,eq,qi->ei", w, pq, G[:, :, c])
        # (grad phi, theta) is exact in the modal basis
        out += vol * phi.gradient().coeffs
        wf = self._face_w(n)
        for a in range(d):
            idx = self._if_groups[a]
            if not len(idx):
                continue
            Tm, _, Tp, _ = self._interior_tables(a, n)
            pm, pp = self.field_at_faces(p, a, idx, n)
            pavg = 0.5 * (pm[0] + pp[0])
            out[a, m.if_minus[idx]] += np.einsum("fq,qi->fi", wf * pavg, Tm)
            out[a, m.if_plus[idx]] -= np.einsum("fq,qi->fi", wf * pavg, Tp)
        for a, s, sel in self._bf_select([Tag.WALL, Tag.INFLOW, Tag.OUTFLOW]):
            _, _, T, _ = sp_.face_tables(a, s, n)
            pb = self.boundary_trace(p, a, s, sel, n)[0]
            np.add.at(out[a], m.bf_elem[sel], s * np.einsum("fq,qi->fi", wf * pb, T))
        return out.reshape(d, -1)

    def b_vel(self, params: ModelParams, sigma: float, sigma_sym: bool = True) -> np.ndarray:
        """Inflow velocity data, shape ``(dim, ndof)``."""
        sp_ = self.space
        m = self.mesh
        d = m.dim
        out = np.zeros((d, m.n_elements, sp_.nb))
        if params.v_D is None:
            return out.reshape(d, -1)
        nr = sp_.n_rich
        wf = self._face_w(nr)
        for a, s, sel in self._bf_select([Tag.INFLOW]):
            _, _, T, G = sp_.face_tables(a, s, nr)
            X = self.boundary_points(a, s, sel, nr)
            vD = np.asarray(params.v_D(X.reshape(-1, d)), dtype=float).reshape(len(sel), -1, d)
            vn = s * vD[:, :, a]
            Gn = s * G[:, :, a]
            for c in range(d):
                g = vD[:, :, c]
                contrib = (-np.einsum("fq,qi->fi", wf * vn * g, T)
                           + (1.0 / params.Re) * np.einsum("fq,qi->fi", wf * g, Gn)
                           + (sigma / (m.h * params.Re)) * np.einsum("fq,qi->fi", wf * g, T))
                np.add.at(out[c], m.bf_elem[sel], contrib)
        return out.reshape(d, -1)

    def b_dens(self, rho: DGField, phi_prev: DGField, rho_ref: float) -> np.ndarray:
        """Element-wise integration by parts of ``-div((1 - rho_ref/rho) grad phi)``;
        boundary contributions on outflow faces only."""
        sp_ = self.space
        m = self.mesh
        out = np.zeros((m.n_elements, sp_.nb))
        if not np.any(phi_prev.coeffs):
            return out.ravel()
        nr = sp_.n_rich
        _, w, V, G = sp_.volume_tables(nr)
        rq = self._volume_values(rho, nr)[0]
        if np.any(rq <= 0):
            raise DensityError("non-positive density at a volume quadrature point")
        gphi = self._volume_values(phi_prev.gradient(), nr)  # (dim, n_el, nq)
        kq = 1.0 - rho_ref / rq
        out += m.cell_volume * np.einsum("q,eq,deq,qid->ei", w, kq, gphi, G)
        wf = self._face_w(nr)
        for a in range(m.dim):
            idx = self._if_groups[a]
            if not len(idx):
                continue
            Tm, Gm, Tp, Gp = self._interior_tables(a, nr)
            rm, rp = self.field_at_faces(rho, a, idx, nr)
            if np.any(rm <= 0) or np.any(rp <= 0):
                raise DensityError("non-positive density at a face quadrature point")
            dm = np.einsum("fi,qi->fq", phi_prev.coeffs[0, m.if_minus[idx]], Gm)
            dp = np.einsum("fi,qi->fq", phi_prev.coeffs[0, m.if_plus[idx]], Gp)
            gm = (1.0 - rho_ref / rm[0]) * dm
            gp = (1.0 - rho_ref / rp[0]) * dp
            # -([[g chi]], 1) with g = k grad(phi).n_e
            out[m.if_minus[idx]] -= np.einsum("fq,qi->fi", wf * gm, Tm)
            out[m.if_plus[idx]] += np.einsum("fq,qi->fi", wf * gp, Tp)
        for a, s, sel in self._bf_select([Tag.OUTFLOW]):
            _, _, T, Gb = sp_.face_tables(a, s, nr)
            rb = self.boundary_trace(rho, a, s, sel, nr)[0]
            if np.any(rb <= 0):
                raise DensityError("non-positive density at a face quadrature point")
            dn = s * self.boundary_trace(phi_prev, a, s, sel, nr, grad=True)[0]
            g = (1.0 - rho_ref / rb) * dn
            np.add.at(out, m.bf_elem[sel], -np.einsum("fq,qi->fi", wf * g, T))
        return out.ravel()

    def divergence_rhs(self, v: DGField) -> np.ndarray:
        """``(div_h v, chi)``; the broken divergence lies in the space."""
        return (self.mesh.cell_volume * v.divergence().coeffs).ravel()

    def capillary_forcing(self, mu: DGField, c: DGField) -> np.ndarray:
        """``(mu grad_h c, theta)``, shape ``(dim, ndof)``."""
        sp_ = self.space
        nr = sp_.n_rich
        _, w, V, _ = sp_.volume_tables(nr)
        mq = self._volume_values(mu, nr)[0]
        gq = self._volume_values(c.gradient(), nr)
        out = self.mesh.cell_volume * np.einsum("q,eq,deq,qi->dei", w, mq, gq, V)
        return out.reshape(self.mesh.dim, -1)

    def weighted_mass_rhs(self, weight: DGField, v: DGField) -> np.ndarray:
        """``(w v, theta)`` for a scalar weight and a (vector) field, shape ``(ncomp, ndof)``."""
        sp_ = self.space
        nr = sp_.n_rich
        _, w, V, _ = sp_.volume_tables(nr)
        wq = self._volume_values(weight, nr)[0]
        vq = self._volume_values(v, nr)
        out = self.mesh.cell_volume * np.einsum("q,eq,ceq,qi->cei", w, wq, vq, V)
        return out.reshape(v.ncomp, -1)


class CoercivityError(ArithmeticError):
    """Variable-coefficient elliptic operator with a non-positive coefficient."""


# ---------------------------------------------------------------------------
# functional wrappers

def assemble_a_diff(space: DGSpace, sigma: float, variant: str = "interior", sigma_bdry=None):
    return Forms(space).a_diff(sigma, variant, sigma_bdry)


def assemble_a_adv(space: DGSpace, velocity: DGField):
    return Forms(space).a_adv(velocity)


def assemble_a_ellip(space: DGSpace, sigma: float, sigma_bdry: float):
    return Forms(space).a_ellip(sigma, sigma_bdry)


def assemble_a_reac(space: DGSpace, rho: DGField, v: DGField):
    return Forms(space).a_reac(rho, v)


def assemble_mass(space: DGSpace, weight: DGField | None = None, grad_div: bool = False):
    """Mass operator; with ``grad_div`` the vector operator
    ``(u, theta) + (div_h u, div_h theta)`` over component-major dofs."""
    f = Forms(space)
    if grad_div:
        return f.grad_div_matrix()
    return f.weighted_mass(weight)
