"""Bound-preserving post-processing of the order parameter.

The flux limiter rescales face mass fluxes so cell averages stay in
``[-1, 1]`` while total mass is unchanged; the slope limiter then scales the
linear part of each troubled cell so its vertex values respect the bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dg import DGField
from .forms import Forms, ModelParams
from .mesh import Tag

C_LOWER = -1.0
C_UPPER = 1.0
MAX_SWEEPS = 1000


class PreconditionError(ValueError):
    """Previous cell averages outside the admissible interval."""


class LimiterError(RuntimeError):
    """The flux-limiting iteration hit its sweep cap without stopping."""


@dataclass
class FaceFluxSet:
    """Mass fluxes across faces, per unit time.

    ``interior[f]`` is the flux leaving the minus element of interior face
    ``f``; the plus element sees ``-interior[f]``, so antisymmetry holds by
    construction.  ``boundary[f]`` is the outward flux through boundary face
    ``f`` (zero on walls).
    """

    interior: np.ndarray
    boundary: np.ndarray

    def copy(self) -> "FaceFluxSet":
        return FaceFluxSet(self.interior.copy(), self.boundary.copy())

    def max_abs(self) -> float:
        vals = [np.max(np.abs(a)) for a in (self.interior, self.boundary) if a.size]
        return float(max(vals)) if vals else 0.0

    def net_outflow(self, mesh) -> np.ndarray:
        """``sum_e H_E(e)`` per element."""
        n = mesh.n_elements
        return (np.bincount(mesh.if_minus, self.interior, n) - np.bincount(mesh.if_plus, self.interior, n)
                + np.bincount(mesh.bf_elem, self.boundary, n))


@dataclass
class LimiterReport:
    iterations: int = 0
    max_residual_flux: float = 0.0
    troubled: int = 0
    min_before: float = 0.0
    max_before: float = 0.0
    min_after: float = 0.0
    max_after: float = 0.0
    history: list = field(default_factory=list)


def compute_fluxes(forms: Forms, c_new: DGField, mu_new: DGField, u_prev: DGField,
                   params: ModelParams, sigma: float) -> FaceFluxSet:
    """Face fluxes consistent with the Step-1 discretization.

    The diffusive part uses the same quadrature as ``a_diff``, the advective
    part the same upwind quadrature as ``a_adv``, so the unlimited update of
    the averages reproduces the averages of ``c_new`` up to the solver
    residual.
    """
    sp_ = forms.space
    m = forms.mesh
    ns, nr = sp_.n_std, sp_.n_rich
    ws, wr = forms._face_w(ns), forms._face_w(nr)
    Hi = np.zeros(m.n_interior_faces)
    grad_mu = mu_new.gradient()
    for a in range(m.dim):
        idx = forms._if_groups[a]
        if not len(idx):
            continue
        gm, gp = forms.field_at_faces(grad_mu, a, idx, ns)
        mm, mp = forms.field_at_faces(mu_new, a, idx, ns)
        diff = (-np.einsum("q,fq->f", ws, 0.5 * (gm[a] + gp[a]))
                + (sigma / m.h) * np.einsum("q,fq->f", ws, mm[0] - mp[0])) / params.Pe
        um, up = forms.field_at_faces(u_prev, a, idx, nr)
        cm, cp = forms.field_at_faces(c_new, a, idx, nr)
        wn = 0.5 * (um[a] + up[a])
        cup = np.where(wn >= 0, cm[0], cp[0])
        Hi[idx] = diff + np.einsum("q,fq->f", wr, cup * wn)
    Hb = np.zeros(m.n_boundary_faces)
    for a, s, sel in forms._bf_select([Tag.INFLOW]):
        un = s * forms.boundary_trace(u_prev, a, s, sel, nr)[a]
        cD = forms._boundary_data(params.c_D, a, s, sel, nr)
        Hb[sel] = np.einsum("q,fq->f", wr, cD * un)
    for a, s, sel in forms._bf_select([Tag.OUTFLOW]):
        un = s * forms.boundary_trace(u_prev, a, s, sel, nr)[a]
        cb = forms.boundary_trace(c_new, a, s, sel, nr)[0]
        Hb[sel] = np.einsum("q,fq->f", wr, cb * un)
    return FaceFluxSet(Hi, Hb)


def _alpha_pm(P, Q):
    """``min(1, Q/P)`` with ``P == 0`` mapped to 1, clipped to ``[0, 1]``."""
    out = np.ones_like(P)
    nz = P != 0
    # a subnormal P overflows the quotient, which then clips to 1
    with np.errstate(over="ignore"):
        out[nz] = np.clip(Q[nz] / P[nz], 0.0, 1.0)
    return out


def limit_element_averages(mesh, averages_prev, fluxes: FaceFluxSet, tau: float,
                           eps1: float = 1e-7, eps2: float = 1e-7, max_sweeps: int = MAX_SWEEPS):
    """Iterative flux limiting of the cell averages.

    Each sweep computes all limiting factors from the previous iterate
    (Jacobi style), then updates averages and residual fluxes.  Returns
    ``(averages_post, report)``; ``report.history`` lists the maximum
    residual flux after every sweep.

    With ``eps1 = eps2 = 0`` the loop runs until the residual fluxes vanish
    or ``max_sweeps`` is reached, which is then not an error.
    """
    cbar = np.array(averages_prev, dtype=float, copy=True)
    if np.any(cbar < C_LOWER) or np.any(cbar > C_UPPER) or not np.all(np.isfinite(cbar)):
        raise PreconditionError("previous cell averages outside [-1, 1]")
    vol = mesh.cell_volume
    n = mesh.n_elements
    Hi = np.array(fluxes.interior, dtype=float, copy=True)
    Hb = np.array(fluxes.boundary, dtype=float, copy=True)
    mi, pl, be = mesh.if_minus, mesh.if_plus, mesh.bf_elem
    report = LimiterReport()
    for sweep in range(1, max_sweeps + 1):
        # incoming (-H > 0) and outgoing (-H < 0) contributions per element
        Pp = tau * (np.bincount(mi, np.maximum(0.0, -Hi), n) + np.bincount(pl, np.maximum(0.0, Hi), n)
                    + np.bincount(be, np.maximum(0.0, -Hb), n))
        Pm = tau * (np.bincount(mi, np.minimum(0.0, -Hi), n) + np.bincount(pl, np.minimum(0.0, Hi), n)
                    + np.bincount(be, np.minimum(0.0, -Hb), n))
        Qp = vol * (C_UPPER - cbar)
        Qm = vol * (C_LOWER - cbar)
        ap = _alpha_pm(Pp, Qp)
        am = _alpha_pm(Pm, Qm)
        # interior faces: H < 0 means mass enters the minus element
        ai = np.where(Hi < 0, np.minimum(ap[mi], am[pl]), np.minimum(am[mi], ap[pl]))
        ai = np.where(Hi == 0, 1.0, ai)
        ab = np.where(Hb < 0, ap[be], am[be])
        ab = np.where(Hb == 0, 1.0, ab)
        Fi = ai * Hi
        Fb = ab * Hb
        net = np.bincount(mi, Fi, n) - np.bincount(pl, Fi, n) + np.bincount(be, Fb, n)
        cbar = np.clip(cbar - (tau / vol) * net, C_LOWER, C_UPPER)
        Hi = Hi - Fi
        Hb = Hb - Fb
        resid = max(np.max(np.abs(Hi), initial=0.0), np.max(np.abs(Hb), initial=0.0))
        change = max(np.max(np.abs(Fi), initial=0.0), np.max(np.abs(Fb), initial=0.0))
        report.history.append(float(resid))
        report.iterations = sweep
        report.max_residual_flux = float(resid)
        if resid < eps1 or change < eps2 or resid == 0.0:
            return cbar, report
    if eps1 > 0 or eps2 > 0:
        raise LimiterError(f"flux limiter did not stop within {max_sweeps} sweeps "
                           f"(residual flux {report.max_residual_flux:.3e})")
    return cbar, report


def apply_flux_limiter(forms: Forms, c_prev: DGField, c_new: DGField, mu_new: DGField, u_prev: DGField,
                       params: ModelParams, sigma: float, tau: float, eps1: float = 1e-7, eps2: float = 1e-7):
    """Replace the cell averages of ``c_new`` by flux-limited ones.

    Returns ``(c_limited, report)``; higher modes are untouched.
    """
    H = compute_fluxes(forms, c_new, mu_new, u_prev, params, sigma)
    pre = c_new.coeffs[0, :, 0]
    post, report = limit_element_averages(forms.mesh, c_prev.coeffs[0, :, 0], H, tau, eps1, eps2)
    report.min_before, report.max_before = float(pre.min()), float(pre.max())
    report.min_after, report.max_after = float(post.min()), float(post.max())
    out = c_new.copy()
    out.coeffs[0, :, 0] = post
    return out, report


def detect_troubled(c: DGField) -> np.ndarray:
    """Indices of elements where ``c`` leaves ``[-1, 1]`` at a check point.

    Degree one checks the vertices; degree two also checks the rich
    quadrature points and face midpoints.
    """
    sp_ = c.space
    table = sp_.vertex_values if sp_.degree == 1 else sp_.check_values
    v = c.values(table)[0]
    return np.flatnonzero(np.any((v < C_LOWER) | (v > C_UPPER), axis=1))


def _beta(avg, vertex_vals):
    """Largest factor in ``[0, 1]`` keeping ``avg + beta (v - avg)`` within bounds."""
    d = vertex_vals - avg[:, None]
    r = np.ones_like(d)
    over = vertex_vals > C_UPPER
    under = vertex_vals < C_LOWER
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(over, (C_UPPER - avg[:, None]) / d, r)
        r = np.where(under, (C_LOWER - avg[:, None]) / d, r)
    return np.clip(np.nan_to_num(r, nan=0.0), 0.0, 1.0).min(axis=1)


def slope_limit(c: DGField, return_count: bool = False):
    """Vertex-based slope limiter.

    On troubled cells the field is reduced to its linear part (cell average
    plus gradient at the barycenter, i.e. the total-degree-one modes of the
    orthonormal basis) and the slope is scaled by the largest admissible
    factor.  Other cells are returned unchanged.
    """
    sp_ = c.space
    ref = sp_.ref
    out = c.copy()
    troubled = detect_troubled(c)
    # round-off guard: also catch cells that violate at the monitored points
    v_all = c.values(sp_.check_values)[0]
    extra = np.flatnonzero(np.any((v_all < C_LOWER) | (v_all > C_UPPER), axis=1))
    troubled = np.union1d(troubled, extra)
    if len(troubled):
        coeffs = out.coeffs[0, troubled]
        lin = np.zeros_like(coeffs)
        lin[:, ref.linear_modes] = coeffs[:, ref.linear_modes]
        avg = lin[:, 0].copy()
        vert = lin @ sp_.vertex_values.T
        beta = _beta(avg, vert)
        slopes = lin.copy()
        slopes[:, 0] = 0.0
        # the guard evaluates exactly like DGField.extrema, so a cell that
        # passes here also passes the logged bounds check
        for _ in range(8):
            new = slopes * beta[:, None]
            new[:, 0] = avg
            out.coeffs[0, troubled] = new
            vals = out.values(sp_.check_values)[0, troubled]
            bad = np.any((vals < C_LOWER) | (vals > C_UPPER), axis=1)
            if not bad.any():
                break
            beta[bad] *= 1.0 - 1e-12
        else:
            beta[bad] = 0.0
            new = slopes * beta[:, None]
            new[:, 0] = avg
            out.coeffs[0, troubled] = new
    if return_count:
        return out, len(troubled)
    return out


def bounds(c: DGField) -> tuple[float, float]:
    """Min and max of ``c`` over vertices, rich quadrature points and face midpoints."""
    return c.extrema()
