"""Krylov solvers, preconditioners and the Newton driver.

The Krylov iterations themselves are scipy's; this module adds the
configuration objects, iteration reports, the Jacobi preconditioner and a
sparse-LU preconditioner that can be reused across many solves.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SolveError(RuntimeError):
    """Linear solve failed to reach tolerance; ``history`` holds residual norms."""

    def __init__(self, msg, history=()):
        super().__init__(msg)
        self.history = list(history)


class PrecondError(ValueError):
    pass


class NewtonError(RuntimeError):
    """Newton iteration did not converge; ``norms`` holds the residual history."""

    def __init__(self, msg, norms=()):
        super().__init__(msg)
        self.norms = list(norms)


METHODS = ("cg", "bicgstab", "gmres", "direct")
PRECONDITIONERS = ("jacobi", "lu", "none")


@dataclass(frozen=True)
class SolverConfig:
    method: str = "gmres"
    rtol: float = 1e-10
    atol: float = 1e-14
    maxiter: int = 1000
    restart: int = 50
    preconditioner: str = "jacobi"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown solver method {self.method!r}")
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("solver tolerances must be positive")
        if self.maxiter < 1 or self.restart < 1:
            raise ValueError("maxiter and restart must be positive")


@dataclass(frozen=True)
class NewtonConfig:
    """``forcing`` is the relative tolerance handed to each inner linear solve.

    With ``schedule='eisenstat-walker'`` it becomes the tightest value of an
    adaptive forcing term ``0.9 (|r_k| / |r_{k-1}|)^2`` capped at 0.1.
    """

    tol: float = 1e-9
    maxiter: int = 25
    forcing: float = 1e-4
    schedule: str = "constant"
    linear: SolverConfig = SolverConfig(method="gmres", preconditioner="lu", rtol=1e-4, maxiter=200)

    def __post_init__(self):
        if not (self.tol > 0 and 0 < self.forcing < 1):
            raise ValueError("Newton tolerance and forcing must be positive (forcing < 1)")
        if self.maxiter < 1:
            raise ValueError("Newton maxiter must be positive")
        if self.schedule not in ("constant", "eisenstat-walker"):
            raise ValueError(f"unknown forcing schedule {self.schedule!r}")


@dataclass
class SolveReport:
    iterations: int
    residual: float
    history: list = field(default_factory=list)


@dataclass
class NewtonReport:
    iterations: int
    norms: list
    linear_iterations: list


def jacobi_preconditioner(A) -> spla.LinearOperator:
    """Inverse-diagonal preconditioner."""
    d = np.asarray(A.diagonal(), dtype=float)
    if np.any(d == 0) or not np.all(np.isfinite(d)):
        raise PrecondError("zero or non-finite diagonal entry")
    inv = 1.0 / d
    return spla.LinearOperator(A.shape, matvec=lambda x: inv * x, dtype=float)


def sparse_lu(A, dtype=np.float64):
    """Sparse LU with a minimum-degree ordering on ``A + A^T``.

    Diagonal pivoting is preferred (threshold 0.01), which keeps the fill of
    the symmetric ordering; this matters a lot for the coupled DG blocks.
    """
    A = sp.csc_matrix(A, dtype=dtype)
    try:
        return spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.01,
                         options=dict(SymmetricMode=True))
    except RuntimeError as exc:
        raise PrecondError(f"LU factorization failed: {exc}") from exc


def lu_preconditioner(A) -> spla.LinearOperator:
    lu = sparse_lu(A)
    return spla.LinearOperator(A.shape, matvec=lu.solve, dtype=float)


def make_preconditioner(A, kind: str):
    if kind == "jacobi":
        return jacobi_preconditioner(A)
    if kind == "lu":
        return lu_preconditioner(A)
    return None


def solve(A, b, config: SolverConfig = SolverConfig(), x0=None, M=None):
    """Solve ``A x = b``; returns ``(x, SolveReport)``.

    ``M`` overrides the preconditioner named in the config (an operator that
    approximates ``A^{-1}``). Success means ``|b - A x| <= max(rtol |b|, atol)``.
    """
    A = sp.csr_matrix(A) if sp.issparse(A) else A
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise ValueError(f"shape mismatch: operator {A.shape}, rhs {b.shape}")
    bnorm = np.linalg.norm(b)
    target = max(config.rtol * bnorm, config.atol)
    if bnorm == 0.0:
        return np.zeros_like(b), SolveReport(0, 0.0, [0.0])

    if config.method == "direct":
        x = sparse_lu(A).solve(b) if sp.issparse(A) else np.linalg.solve(A, b)
        res = float(np.linalg.norm(b - A @ x))
        return x, SolveReport(1, res, [bnorm, res])

    if M is None:
        M = make_preconditioner(A, config.preconditioner)
    history = []
    # scipy measures rtol against |b|; atol is passed through unchanged
    kw = dict(rtol=config.rtol, atol=config.atol, M=M, x0=x0)
    if config.method == "gmres":
        x, info = spla.gmres(A, b, restart=config.restart, maxiter=config.maxiter,
                             callback=lambda r: history.append(float(r)), callback_type="pr_norm", **kw)
        # pr_norm is relative to |b| (preconditioned); count inner iterations
        iterations = len(history)
    else:
        solver = spla.cg if config.method == "cg" else spla.bicgstab
        x, info = solver(A, b, maxiter=config.maxiter,
                         callback=lambda xk: history.append(float(np.linalg.norm(b - A @ xk))), **kw)
        iterations = len(history)
    res = float(np.linalg.norm(b - A @ x))
    if info < 0 or not np.isfinite(res):
        raise SolveError(f"{config.method} breakdown (info={info})", history)
    if res > target * (1 + 1e-8) and info != 0:
        raise SolveError(f"{config.method} stopped after {iterations} iterations with residual "
                         f"{res:.3e} > {target:.3e}", history)
    return x, SolveReport(iterations, res, history)


class ReusableLU:
    """An LU preconditioner kept across solves until it stops paying off.

    The factorization is recomputed when the previous solve needed more than
    ``max_iterations`` Krylov iterations, or on ``invalidate()``.  With
    ``single=True`` the factors are stored in single precision, which halves
    the memory traffic of each application; the outer Krylov iteration
    still runs in double precision.
    """

    def __init__(self, max_iterations: int = 8, single: bool = True):
        self.max_iterations = max_iterations
        self.dtype = np.float32 if single else np.float64
        self.lu = None
        self.factorizations = 0
        self._stale = True

    def invalidate(self):
        self._stale = True

    def operator(self, A) -> spla.LinearOperator:
        if self._stale or self.lu is None or self.lu.shape != A.shape:
            self.lu = sparse_lu(A, self.dtype)
            self.factorizations += 1
            self._stale = False
        lu, dt = self.lu, self.dtype
        return spla.LinearOperator(A.shape, matvec=lambda x: lu.solve(x.astype(dt)).astype(float), dtype=float)

    def record(self, iterations: int):
        if iterations > self.max_iterations:
            self._stale = True


def newton_solve(residual, jacobian, x0, config: NewtonConfig = NewtonConfig(), preconditioner=None):
    """Inexact Newton iteration for ``residual(x) = 0``.

    Parameters
    ----------
    residual, jacobian : callable
        ``residual(x)`` returns a vector, ``jacobian(x)`` a sparse matrix or a
        dense array.
    x0 : ndarray
        Initial guess.
    preconditioner : ReusableLU, optional
        Shared factorization; when given, the inner Krylov solver is
        preconditioned with it instead of the config's preconditioner.

    Returns
    -------
    x, NewtonReport
        Convergence means ``max|residual(x)| <= config.tol``.
    """
    x = np.array(x0, dtype=float, copy=True)
    r = np.atleast_1d(residual(x))
    norms = [float(np.max(np.abs(r)))]
    lin_its = []
    base = config.linear
    eta = config.forcing if config.schedule == "constant" else 0.1
    for _ in range(config.maxiter):
        if norms[-1] <= config.tol:
            return x, NewtonReport(len(norms) - 1, norms, lin_its)
        if config.schedule != "constant" and len(norms) > 1:
            eta_new = 0.9 * (norms[-1] / norms[-2]) ** 2
            if 0.9 * eta ** 2 > 0.1:
                eta_new = max(eta_new, 0.9 * eta ** 2)
            # no point solving far below what the stopping test needs
            eta = min(0.1, max(eta_new, config.forcing, 0.5 * config.tol / norms[-1]))
        lin = SolverConfig(base.method, eta, base.atol, base.maxiter, base.restart, base.preconditioner)
        J = jacobian(x)
        if sp.issparse(J) or np.ndim(J) == 2:
            J = J if sp.issparse(J) else np.atleast_2d(J)
            if not sp.issparse(J) and J.shape[0] <= 200:
                dx = np.linalg.solve(J, -r)
                lin_its.append(1)
            else:
                M = preconditioner.operator(J) if preconditioner is not None else None
                try:
                    dx, rep = solve(J, -r, lin, M=M)
                except SolveError:
                    if preconditioner is None:
                        raise
                    # a stale factorization; refresh once and retry
                    preconditioner.invalidate()
                    dx, rep = solve(J, -r, lin, M=preconditioner.operator(J))
                if preconditioner is not None:
                    preconditioner.record(rep.iterations)
                lin_its.append(rep.iterations)
        else:
            dx = -r / J
            lin_its.append(1)
        x = x + dx
        r = np.atleast_1d(residual(x))
        norms.append(float(np.max(np.abs(r))))
        if not np.isfinite(norms[-1]):
            raise NewtonError("residual became non-finite", norms)
    if norms[-1] <= config.tol:
        return x, NewtonReport(len(norms) - 1, norms, lin_its)
    raise NewtonError(f"Newton did not converge in {config.maxiter} iterations "
                      f"(last residual {norms[-1]:.3e})", norms)
