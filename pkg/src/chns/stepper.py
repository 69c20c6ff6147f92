"""One time step of the seven-step scheme, plus the standard projection baseline.

Step 1 solves the coupled Cahn-Hilliard system by Newton's method, Step 2
limits the order parameter, Steps 3-4 update the chemical potential and the
density, Step 5 solves the momentum equation, Step 6 the constant-coefficient
pressure Poisson problem and Step 7 updates pressure and velocity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
import json
import math

import numpy as np
import scipy.sparse as sp

from .dg import DGField, DGSpace
from .mesh import Tag
from .forms import CoercivityError, DensityError, Forms, ModelParams, PenaltySet
from .limiters import LimiterError, LimiterReport, PreconditionError, apply_flux_limiter, slope_limit
from .linalg import (NewtonConfig, NewtonError, ReusableLU, SolveError, SolverConfig,
                     newton_solve, solve, sparse_lu)

CHECKPOINT_VERSION = 1


class StepError(RuntimeError):
    """A step failed; ``history`` carries residual norms when available."""

    def __init__(self, msg, step=None, history=()):
        super().__init__(msg)
        self.step = step
        self.history = list(history)


class SchemeVariant(str, Enum):
    CONSTANT = "constant"
    STANDARD = "standard"


@dataclass(frozen=True)
class SchemeConfig:
    tau: float
    params: ModelParams = ModelParams()
    penalties: PenaltySet = PenaltySet()
    flux_limiter: bool = True
    slope_limiter: bool = True
    eps1: float = 1e-7
    eps2: float = 1e-7
    variant: SchemeVariant = SchemeVariant.CONSTANT
    newton: NewtonConfig = NewtonConfig()
    momentum_solver: SolverConfig = SolverConfig(method="bicgstab", preconditioner="jacobi", rtol=1e-10)
    pressure_solver: SolverConfig = SolverConfig(method="direct", preconditioner="lu")
    lu_reuse_iterations: int = 8

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("time step must be positive")
        if self.eps1 < 0 or self.eps2 < 0:
            raise ValueError("limiter tolerances must be non-negative")


@dataclass
class FlowState:
    c: DGField
    mu: DGField
    rho: DGField
    p: DGField
    phi: DGField
    v: DGField
    u: DGField
    n: int = 0
    t: float = 0.0

    FIELDS = ("c", "mu", "rho", "p", "phi", "v", "u")

    def copy(self) -> "FlowState":
        return FlowState(*(getattr(self, k).copy() for k in self.FIELDS), n=self.n, t=self.t)


@dataclass
class StepReport:
    newton_iterations: int = 0
    newton_norms: list = field(default_factory=list)
    linear_iterations: list = field(default_factory=list)
    limiter: LimiterReport | None = None
    troubled: int = 0
    momentum_iterations: int = 0


def density_field(c: DGField, params: ModelParams) -> DGField:
    """Linear mixing rule applied to the modal coefficients (exact)."""
    rho = c.copy()
    rho.coeffs *= 0.5 * (params.rho_A - params.rho_B)
    rho.coeffs[:, :, 0] += 0.5 * (params.rho_A + params.rho_B)
    return rho


class Stepper:
    """Holds the constant operators of a run and advances a ``FlowState``.

    ``counts`` tallies operator assemblies; ``counts['pressure_operator']``
    is 1 for the constant-coefficient variant however many steps are taken.
    """

    def __init__(self, space: DGSpace, config: SchemeConfig):
        self.space = space
        self.config = config
        self.mesh = space.mesh
        self.forms = Forms(space)
        self.counts = self.forms.counts
        pen = config.penalties
        f = self.forms
        self.vol = self.mesh.cell_volume
        self.A_mu = f.a_diff(pen.sigma_diff)
        self.A_c = f.a_diff(pen.sigma_diff, "plus_inflow", pen.sigma_diff_in)
        self.A_ellip = f.a_ellip(pen.sigma_ellip_interior, pen.sigma_ellip_in)
        self.M = f.mass_matrix()
        self.b_vel = f.b_vel(config.params, pen.sigma_bvel)
        # one weak gradient for p and phi, and its adjoint as the divergence in
        # Step 6; mixing it with the broken operators makes the splitting unstable.
        # Outflow faces are left out (phi = 0 there) and the inflow data enter
        # the divergence through (v - v_D).n
        self.G = f.weak_gradient_matrices((Tag.WALL, Tag.INFLOW))
        self.GT = [g.T.tocsr() for g in self.G]
        self.div_data = f.inflow_flux(config.params)
        B = f.grad_div_blocks()
        self._gd_inv = np.linalg.inv(B)
        self._ch_lu = ReusableLU(config.lu_reuse_iterations)
        self._pressure = None

    # ------------------------------------------------------------------
    # state construction
    def initialize(self, c0, v0=None) -> FlowState:
        """``c0``/``v0`` are pointwise functions or ready-made ``DGField`` s."""
        sp_ = self.space
        prm = self.config.params
        c = c0 if isinstance(c0, DGField) else sp_.project(c0, 1)
        if self.config.slope_limiter:
            c = slope_limit(c)
        if v0 is None:
            v = sp_.zeros(sp_.dim)
        else:
            v = v0 if isinstance(v0, DGField) else sp_.project(v0, sp_.dim)
        mu = self.update_mu(c)
        return FlowState(c=c, mu=mu, rho=density_field(c, prm), p=sp_.zeros(), phi=sp_.zeros(),
                         v=v.copy(), u=v.copy(), n=0, t=0.0)

    # ------------------------------------------------------------------
    # Step 1
    def ch_system(self, state: FlowState):
        """Residual and Jacobian of the assembled coupled (c, mu) system."""
        cfg = self.config
        prm = cfg.params
        tau = cfg.tau
        f = self.forms
        n = self.space.ndof
        u = state.u
        if np.any(u.coeffs):
            B = f.a_adv(u)
            inflow = f.inflow_advection(u, prm.c_D)
        else:
            B = sp.csr_matrix((n, n))
            inflow = np.zeros(n)
        Cn2 = prm.Cn ** 2
        c_old = state.c.vector.copy()
        rhs2 = Cn2 * f.b_diff(state.c, prm, cfg.penalties.sigma_diff_in) + self.M @ c_old
        rhs1 = self.M @ c_old - tau * inflow
        K11 = (self.M + tau * B).tocsr()
        K12 = (tau / prm.Pe) * self.A_mu
        K21 = Cn2 * self.A_c

        def residual(x):
            c, mu = x[:n], x[n:]
            cf = self.space.from_vector(c)
            r1 = K11 @ c + K12 @ mu - rhs1
            r2 = K21 @ c - self.M @ mu + f.potential_term(cf) - rhs2
            return np.concatenate([r1, r2])

        def jacobian(x):
            cf = self.space.from_vector(x[:n])
            return sp.bmat([[K11, K12], [K21 + f.potential_jacobian(cf), -self.M]], format="csc")

        return residual, jacobian

    def step1_cahn_hilliard(self, state: FlowState, report: StepReport | None = None):
        residual, jacobian = self.ch_system(state)
        x0 = np.concatenate([state.c.vector, state.mu.vector])
        try:
            x, rep = newton_solve(residual, jacobian, x0, self.config.newton, preconditioner=self._ch_lu)
        except (NewtonError, SolveError) as exc:
            hist = getattr(exc, "norms", getattr(exc, "history", []))
            raise StepError(f"Cahn-Hilliard Newton solve failed at step {state.n + 1}: {exc}; "
                            "consider reducing the time step", state.n + 1, hist) from exc
        if report is not None:
            report.newton_iterations = rep.iterations
            report.newton_norms = rep.norms
            report.linear_iterations = rep.linear_iterations
        n = self.space.ndof
        return self.space.from_vector(x[:n]), self.space.from_vector(x[n:])

    def invalidate_preconditioner(self):
        """Force a fresh factorization at the next Newton iteration.

        Called at checkpoints so a resumed run sees the same preconditioner
        as an uninterrupted one.
        """
        self._ch_lu.invalidate()

    # ------------------------------------------------------------------
    # Steps 2-4
    def step2_limit(self, c_prev: DGField, c_new: DGField, mu_new: DGField, u_prev: DGField,
                    report: StepReport | None = None) -> DGField:
        cfg = self.config
        c = c_new
        if cfg.flux_limiter:
            c, lrep = apply_flux_limiter(self.forms, c_prev, c, mu_new, u_prev, cfg.params,
                                         cfg.penalties.sigma_diff, cfg.tau, cfg.eps1, cfg.eps2)
            if report is not None:
                report.limiter = lrep
        if cfg.slope_limiter:
            c, count = slope_limit(c, return_count=True)
            if report is not None:
                report.troubled = count
        return c

    def update_mu(self, c: DGField) -> DGField:
        """Step 3: mass solve for the chemical potential at the new ``c``."""
        prm = self.config.params
        f = self.forms
        Cn2 = prm.Cn ** 2
        rhs = (Cn2 * (self.A_c @ c.vector) + f.potential_term(c)
               - Cn2 * f.b_diff(c, prm, self.config.penalties.sigma_diff_in) - self.M @ c.vector)
        return self.space.from_vector(rhs / self.vol)

    def step4_density(self, c: DGField) -> DGField:
        return density_field(c, self.config.params)

    # ------------------------------------------------------------------
    # Step 5
    def step5_momentum(self, state: FlowState, c: DGField, mu: DGField, rho: DGField,
                       report: StepReport | None = None) -> DGField:
        cfg = self.config
        prm = cfg.params
        tau = cfg.tau
        f = self.forms
        d = self.space.dim
        K = f.weighted_mass(rho, check_positive=True)
        if np.any(state.v.coeffs):
            K = K + tau * f.a_reac(rho, state.v)
        K = (K + (tau / prm.Re) * self.A_ellip).tocsr()
        rhs = (f.weighted_mass_rhs(state.rho, state.v)
               - (tau / (prm.Re * prm.Ca)) * self.pressure_force(state.p, state.phi)
               + (3.0 * tau / (2.0 * math.sqrt(2.0) * prm.Re * prm.Ca * prm.Cn)) * f.capillary_forcing(mu, c)
               + tau * self.b_vel)
        out = np.empty((d, self.space.ndof))
        its = 0
        for k in range(d):
            try:
                out[k], rep = solve(K, rhs[k], cfg.momentum_solver, x0=state.v.coeffs[k].ravel())
            except SolveError as exc:
                raise StepError(f"momentum solve failed at step {state.n + 1}: {exc}",
                                state.n + 1, exc.history) from exc
            its += rep.iterations
        if report is not None:
            report.momentum_iterations = its
        return self.space.from_vector(out, d)

    # ------------------------------------------------------------------
    # Step 6
    def pressure_operator(self):
        """The constant Poisson operator, assembled on first use only."""
        if self._pressure is None:
            s = self.config.penalties.sigma_diff_out
            A = self.forms.a_diff(s, "plus_outflow", s)
            self.counts["pressure_operator"] += 1
            solver = None
            if self.config.pressure_solver.method == "direct":
                if self.mesh.closed:
                    solver = sparse_lu(self._bordered(A))
                else:
                    solver = sparse_lu(A)
            self._pressure = (A, solver)
        return self._pressure

    def _bordered(self, A):
        """Append the mean-zero constraint for closed domains."""
        n = A.shape[0]
        g = np.zeros(n)
        g[:: self.space.nb] = self.vol
        col = sp.csc_matrix(g.reshape(-1, 1))
        return sp.bmat([[A, col], [col.T, None]], format="csc")

    def _solve_poisson(self, A, solver, rhs, x0=None):
        """Solve with the pure-Neumann singularity handled for closed domains."""
        n = A.shape[0]
        closed = self.mesh.closed
        if solver is not None:
            if closed:
                return solver.solve(np.concatenate([rhs, [0.0]]))[:n]
            return solver.solve(rhs)
        cfg = self.config.pressure_solver
        if closed:
            # project the right-hand side onto the range (orthogonal to constants)
            ones = np.zeros(n)
            ones[:: self.space.nb] = 1.0
            rhs = rhs - ones * (rhs @ ones) / (ones @ ones)
        x, _ = solve(A, rhs, cfg, x0=x0)
        if closed:
            x[:: self.space.nb] -= x[:: self.space.nb].mean()
        return x

    def step6_pressure_poisson(self, state: FlowState, v: DGField, rho: DGField) -> DGField:
        cfg = self.config
        prm = cfg.params
        f = self.forms
        A, solver = self.pressure_operator()
        rhs = (f.b_dens(rho, state.phi, prm.rho_ref)
               - (prm.Re * prm.Ca * prm.rho_ref / cfg.tau) * self.weak_divergence(v))
        try:
            x = self._solve_poisson(A, solver, rhs, x0=state.phi.vector)
        except SolveError as exc:
            raise StepError(f"pressure solve failed at step {state.n + 1}: {exc}", state.n + 1, exc.history) from exc
        return self.space.from_vector(x)

    # ------------------------------------------------------------------
    # Step 7
    def _grad_div_solve(self, rhs: np.ndarray) -> DGField:
        """Element-local solve of ``(u, theta) + (div u, div theta) = rhs``."""
        d, nb, n_el = self.space.dim, self.space.nb, self.space.n_el
        r = rhs.reshape(d, n_el, nb).transpose(1, 0, 2).reshape(n_el, d * nb)
        u = r @ self._gd_inv.T
        return DGField(self.space, u.reshape(n_el, d, nb).transpose(1, 0, 2).copy())

    def _pressure_update(self, p_prev: DGField, phi: DGField, v: DGField) -> DGField:
        p = p_prev.copy()
        p.coeffs += phi.coeffs - (2.0 / 3.0) * self.config.params.Ca * v.divergence().coeffs
        return p

    def step7_update(self, state: FlowState, v: DGField, phi: DGField, rho: DGField):
        cfg = self.config
        prm = cfg.params
        p = self._pressure_update(state.p, phi, v)
        coef = cfg.tau / (prm.Re * prm.Ca * prm.rho_ref)
        rhs = self.vol * v.coeffs - coef * self.pressure_force(phi).reshape(v.coeffs.shape)
        if np.any(state.phi.coeffs):
            w = self._volume_weight(rho, lambda r: prm.rho_ref / r - 1.0)
            rhs = rhs - coef * self._weighted_vector_rhs(w, self.lifted_gradient(state.phi))
        return p, self._grad_div_solve(rhs.reshape(-1))

    def pressure_force(self, *fields: DGField) -> np.ndarray:
        """Weak gradient of the sum of ``fields`` tested against ``theta``, shape ``(dim, ndof)``."""
        x = sum(f.vector for f in fields)
        return np.stack([g @ x for g in self.G])

    def weak_divergence(self, v: DGField) -> np.ndarray:
        """``(div_h v, chi) - ([v.n], {chi}) - ((v - v_D).n, chi)_{wall+inflow}``."""
        return self.div_data - sum(gt @ v.coeffs[c].ravel() for c, gt in enumerate(self.GT))

    def lifted_gradient(self, phi: DGField) -> DGField:
        """The weak gradient as a DG vector field (mass matrix is ``|E| I``)."""
        return self.space.from_vector(self.pressure_force(phi) / self.vol, self.space.dim)

    def _volume_weight(self, rho: DGField, fn):
        sp_ = self.space
        rq = self.forms._volume_values(rho, sp_.n_rich)[0]
        if np.any(rq <= 0):
            raise DensityError("non-positive density at a volume quadrature point")
        return fn(rq)

    def _weighted_vector_rhs(self, wq: np.ndarray, g: DGField) -> np.ndarray:
        sp_ = self.space
        _, w, V, _ = sp_.volume_tables(sp_.n_rich)
        gq = self.forms._volume_values(g, sp_.n_rich)
        return self.vol * np.einsum("q,eq,ceq,qi->cei", w, wq, gq, V)

    # ------------------------------------------------------------------
    # baseline variant
    def standard_projection_step(self, state: FlowState, v: DGField, rho: DGField):
        """Variable-coefficient projection: ``-div((1/rho) grad phi) = -(Re Ca/tau) div v``,
        then ``u = v - tau/(Re Ca) (1/rho) grad phi`` through the same
        grad-div mass system.  Reassembles its operator every call."""
        cfg = self.config
        prm = cfg.params
        f = self.forms
        s = cfg.penalties.sigma_diff_out
        A = f.weighted_a_diff(rho, s, s)
        self.counts["pressure_operator"] += 1
        rhs = -(prm.Re * prm.Ca / cfg.tau) * self.weak_divergence(v)
        if cfg.pressure_solver.method == "direct":
            lu = sparse_lu(self._bordered(A) if self.mesh.closed else A)
            x = self._solve_poisson(A, lu, rhs)
        else:
            x = self._solve_poisson(A, None, rhs, x0=state.phi.vector)
        phi = self.space.from_vector(x)
        p = self._pressure_update(state.p, phi, v)
        w = self._volume_weight(rho, lambda r: 1.0 / r)
        rhs_u = self.vol * v.coeffs - (cfg.tau / (prm.Re * prm.Ca)) * self._weighted_vector_rhs(w, self.lifted_gradient(phi))
        return phi, p, self._grad_div_solve(rhs_u.reshape(-1))

    # ------------------------------------------------------------------
    def advance(self, state: FlowState, report: StepReport | None = None) -> FlowState:
        """Run Steps 1-7 and return the state at the next time level."""
        cfg = self.config
        c_new, mu_new = self.step1_cahn_hilliard(state, report)
        try:
            c_new = self.step2_limit(state.c, c_new, mu_new, state.u, report)
        except (LimiterError, PreconditionError) as exc:
            raise StepError(f"flux limiter failed at step {state.n + 1}: {exc}", state.n + 1) from exc
        mu_new = self.update_mu(c_new)
        rho = self.step4_density(c_new)
        try:
            v = self.step5_momentum(state, c_new, mu_new, rho, report)
            if cfg.variant == SchemeVariant.CONSTANT:
                phi = self.step6_pressure_poisson(state, v, rho)
                p, u = self.step7_update(state, v, phi, rho)
            else:
                phi, p, u = self.standard_projection_step(state, v, rho)
        except (DensityError, CoercivityError) as exc:
            raise StepError(f"step {state.n + 1}: {exc}", state.n + 1) from exc
        return FlowState(c=c_new, mu=mu_new, rho=rho, p=p, phi=phi, v=v, u=u,
                         n=state.n + 1, t=(state.n + 1) * cfg.tau)

    # ------------------------------------------------------------------
    def observables(self, state: FlowState) -> dict:
        vol = self.vol
        total = self.mesh.volume
        cmin, cmax = state.c.extrema()
        ke = 0.5 * float(np.sum(self.forms.weighted_mass_rhs(state.rho, state.u) * state.u.coeffs.reshape(self.space.dim, -1)))
        div = state.u.divergence().coeffs
        return {
            "n": state.n,
            "t": state.t,
            "mean_c": float(np.sum(state.c.coeffs[0, :, 0]) * vol / total),
            "mean_rho": float(np.sum(state.rho.coeffs[0, :, 0]) * vol / total),
            "min_c": cmin,
            "max_c": cmax,
            "kinetic_energy": ke,
            "div_norm": float(math.sqrt(vol * np.sum(div ** 2))),
        }


# ----------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, state: FlowState, metadata: dict | None = None) -> None:
    """Write every modal coefficient plus JSON metadata to an ``.npz`` file."""
    arrays = {k: getattr(state, k).coeffs for k in FlowState.FIELDS}
    meta = dict(metadata or {})
    meta.update(version=CHECKPOINT_VERSION, n=state.n, t=state.t.hex())
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path, space: DGSpace | None = None):
    """Return ``(arrays_or_state, metadata)``.

    With ``space`` given the coefficients are wrapped into a ``FlowState``.
    """
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        arrays = {k: z[k].copy() for k in FlowState.FIELDS}
    if space is None:
        return arrays, meta
    fields = {k: DGField(space, arrays[k]) for k in FlowState.FIELDS}
    return FlowState(**fields, n=int(meta["n"]), t=float.fromhex(meta["t"])), meta
