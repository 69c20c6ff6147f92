import numpy as np
import pytest

from chns.dg import DGSpace
from chns.forms import ModelParams, PenaltySet
from chns.linalg import NewtonConfig, SolverConfig
from chns.mesh import BoundarySpec, PlaneSelector, build_voxel_mesh, classify_boundary
from chns.scenarios import inflow_profile
from chns.stepper import (SchemeConfig, SchemeVariant, StepError, StepReport, Stepper, density_field,
                          load_checkpoint, save_checkpoint)


def box(n, degree=1, shape=None):
    shape = shape or (n, n)
    return DGSpace(build_voxel_mesh(np.ones(shape, bool), h=1 / n), degree)


def channel_space(n, degree=1):
    m = build_voxel_mesh(np.ones((n, n), bool), h=1 / n)
    m = classify_boundary(m, BoundarySpec((PlaneSelector(0, 0.0),), (PlaneSelector(0, 1.0),)))
    return DGSpace(m, degree)


def stepper(space, tau=1e-3, **kw):
    prm = kw.pop("params", ModelParams(Cn=space.h))
    return Stepper(space, SchemeConfig(tau=tau, params=prm, **kw))


def test_density_rule():
    s = box(2)
    prm = ModelParams()
    assert density_field(s.constant(1.0), prm).cell_average(0) == 1200.0
    assert density_field(s.constant(-1.0), prm).cell_average(0) == 800.0
    assert density_field(s.constant(0.0), prm).cell_average(0) == 1000.0
    c = s.project(lambda X: X[:, 0] - 0.3)
    rho = density_field(c, prm)
    pts = s.check_values
    np.testing.assert_allclose(rho.values(pts), prm.density(c.values(pts)), rtol=1e-14)


def test_update_mu_constants():
    st = stepper(box(4))
    assert np.abs(st.update_mu(box(4).constant(1.0)).coeffs).max() < 1e-13
    assert np.abs(st.update_mu(box(4).constant(0.0)).coeffs).max() == 0.0
    mu = st.update_mu(box(4).constant(0.5))
    np.testing.assert_allclose(mu.averages(), -0.375, atol=1e-14)
    np.testing.assert_allclose(mu.coeffs[0, :, 1:], 0.0, atol=1e-14)


def test_bulk_equilibrium_is_fixed_point():
    s = box(4)
    st = stepper(s)
    state = st.initialize(s.constant(1.0))
    new = st.advance(state)
    np.testing.assert_allclose(new.c.coeffs, state.c.coeffs, atol=1e-12)
    assert np.abs(new.mu.coeffs).max() < 1e-10
    assert np.abs(new.u.coeffs).max() < 1e-12
    assert np.abs(new.p.coeffs).max() < 1e-10


def test_equilibrium_profile_nearly_stationary():
    n = 64
    s = box(n, shape=(n, 2))
    cn = 1 / 16
    prm = ModelParams(Cn=cn)
    st = stepper(s, tau=1e-5, params=prm)
    state = st.initialize(lambda X: np.tanh((X[:, 0] - 0.5) / (np.sqrt(2) * cn)))
    new = st.advance(state)
    assert np.abs(new.c.coeffs - state.c.coeffs).max() <= 1e-3


def test_flat_interface_rest_state():
    s = box(16)
    st = stepper(s, params=ModelParams(Cn=1 / 16, Ca=0.1))
    state = st.initialize(lambda X: np.tanh((X[:, 1] - 0.5) / (np.sqrt(2) / 16)))
    for _ in range(10):
        state = st.advance(state)
        lo, hi = state.c.extrema()
        assert -1 <= lo and hi <= 1
    assert st.observables(state)["kinetic_energy"] < 1e-6


def test_momentum_rest_state():
    s = box(4)
    st = stepper(s)
    state = st.initialize(s.constant(-1.0))
    v = st.step5_momentum(state, state.c, state.mu, state.rho)
    assert np.abs(v.coeffs).max() == 0.0
    phi = st.step6_pressure_poisson(state, v, state.rho)
    assert np.abs(phi.coeffs).max() == 0.0
    p, u = st.step7_update(state, v, phi, state.rho)
    np.testing.assert_array_equal(p.coeffs, state.p.coeffs)
    np.testing.assert_array_equal(u.coeffs, v.coeffs)


def test_weak_divergence_properties():
    s = box(6, 2)
    st = stepper(s)
    # constants are orthogonal to the weak divergence of any field in a closed box
    v = s.from_vector(np.random.default_rng(0).normal(size=2 * s.ndof), 2)
    assert np.sum(st.weak_divergence(v)[:: s.nb]) == pytest.approx(0.0, abs=1e-12)
    # a smooth field tangential to every wall: weak and broken divergence agree
    w = s.project(lambda X: np.column_stack([X[:, 0] * (1 - X[:, 0]), X[:, 1] * (1 - X[:, 1])]), ncomp=2)
    np.testing.assert_allclose(st.weak_divergence(w), st.forms.divergence_rhs(w), atol=1e-12)


def test_poiseuille_is_discretely_solenoidal():
    s = channel_space(6, 2)
    prm = ModelParams(Cn=1 / 6, v_D=inflow_profile(2))
    st = stepper(s, params=prm)
    v = s.project(lambda X: np.column_stack([4 * X[:, 1] * (1 - X[:, 1]), np.zeros(len(X))]), ncomp=2)
    assert np.abs(st.weak_divergence(v)).max() < 1e-13
    # so the projection leaves it unchanged
    phi = st.step6_pressure_poisson(st.initialize(s.constant(-1.0)), v, density_field(s.constant(-1.0), prm))
    assert np.abs(phi.coeffs).max() < 1e-10


def test_pressure_operator_assembled_once():
    s = channel_space(6)
    prm = ModelParams(Cn=1 / 6, v_D=inflow_profile(2))
    st = stepper(s, params=prm)
    state = st.initialize(s.constant(-1.0))
    for _ in range(4):
        state = st.advance(state)
    assert st.counts["pressure_operator"] == 1
    std = stepper(s, params=prm, variant=SchemeVariant.STANDARD)
    state = std.initialize(s.constant(-1.0))
    for _ in range(4):
        state = std.advance(state)
    assert std.counts["pressure_operator"] == 4


def test_variants_agree_at_reference_density():
    s = channel_space(6)
    prm = ModelParams(Cn=1 / 6, rho_A=800.0, rho_B=800.0, v_D=inflow_profile(2))
    a = stepper(s, params=prm)
    b = stepper(s, params=prm, variant=SchemeVariant.STANDARD)
    sa = a.initialize(s.constant(-1.0))
    sb = b.initialize(s.constant(-1.0))
    for _ in range(3):
        sa, sb = a.advance(sa), b.advance(sb)
    np.testing.assert_allclose(sa.u.coeffs, sb.u.coeffs, atol=1e-9)
    np.testing.assert_allclose(sa.p.coeffs, sb.p.coeffs, atol=1e-8 * max(1.0, np.abs(sa.p.coeffs).max()))


def test_inflow_drives_flow():
    s = channel_space(4)
    prm = ModelParams(Cn=1 / 4, v_D=inflow_profile(2))
    st = stepper(s, params=prm)
    state = st.advance(st.initialize(s.constant(-1.0)))
    # the projection imposes the inflow flux: mean of 4y(1-y) over the channel
    assert state.u.averages()[0].mean() == pytest.approx(2 / 3, abs=1e-8)
    # the step-5 velocity solves the assembled momentum system
    K = (st.forms.weighted_mass(state.rho) + (st.config.tau / prm.Re) * st.A_ellip).toarray()
    rhs = st.config.tau * st.b_vel
    ref = np.linalg.solve(K, rhs[0])
    np.testing.assert_allclose(state.v.coeffs[0].ravel(), ref, rtol=1e-8, atol=1e-12)


def test_ch_jacobian_finite_differences():
    s = channel_space(4, 2)
    prm = ModelParams(Cn=1 / 4, v_D=inflow_profile(2), theta=60.0)
    st = stepper(s, params=prm)
    rng = np.random.default_rng(11)
    state = st.initialize(s.from_vector(0.5 * rng.uniform(-1, 1, s.ndof)))
    state.u = s.from_vector(rng.normal(size=2 * s.ndof), 2)
    F, J = st.ch_system(state)
    x = rng.normal(size=2 * s.ndof)
    d = rng.normal(size=2 * s.ndof)
    eps = 1e-6
    fd = (F(x + eps * d) - F(x - eps * d)) / (2 * eps)
    jd = J(x) @ d
    assert np.linalg.norm(fd - jd) <= 1e-6 * np.linalg.norm(jd)


def test_newton_failure_becomes_step_error():
    s = box(4)
    cfg = SchemeConfig(tau=1e-3, params=ModelParams(Cn=0.25),
                       newton=NewtonConfig(maxiter=1, tol=1e-14,
                                           linear=SolverConfig(method="gmres", preconditioner="lu", rtol=1e-4)))
    st = Stepper(s, cfg)
    rng = np.random.default_rng(0)
    state = st.initialize(s.from_averages(rng.choice([-1.0, 1.0], s.n_el)))
    with pytest.raises(StepError) as err:
        st.advance(state)
    assert err.value.step == 1
    assert len(err.value.history) >= 1


def test_step_report_fields():
    s = box(6)
    st = stepper(s)
    rng = np.random.default_rng(1)
    state = st.initialize(s.from_averages(rng.choice([-1.0, 1.0], s.n_el)))
    rep = StepReport()
    st.advance(state, rep)
    assert rep.newton_iterations >= 1
    assert rep.limiter is not None and rep.limiter.iterations >= 1
    assert rep.momentum_iterations >= 1


def test_checkpoint_round_trip(tmp_path):
    s = box(4, 2)
    st = stepper(s)
    rng = np.random.default_rng(2)
    state = st.advance(st.initialize(s.from_averages(rng.uniform(-0.9, 0.9, s.n_el))))
    path = tmp_path / "ck.npz"
    save_checkpoint(path, state, {"note": "x"})
    back, meta = load_checkpoint(path, s)
    assert meta["note"] == "x" and back.n == 1 and back.t == state.t
    for k in state.FIELDS:
        np.testing.assert_array_equal(getattr(back, k).coeffs, getattr(state, k).coeffs)
    arrays, _ = load_checkpoint(path)
    assert set(arrays) == set(state.FIELDS)


def test_restart_is_bit_exact(tmp_path):
    s = box(6)
    st = stepper(s)
    rng = np.random.default_rng(3)
    state = st.initialize(s.from_averages(rng.choice([-1.0, 1.0], s.n_el)))
    for _ in range(2):
        state = st.advance(state)
    save_checkpoint(tmp_path / "c.npz", state)
    st.invalidate_preconditioner()
    cont = st.advance(st.advance(state))
    back, _ = load_checkpoint(tmp_path / "c.npz", s)
    st2 = stepper(s)
    again = st2.advance(st2.advance(back))
    for k in state.FIELDS:
        np.testing.assert_array_equal(getattr(again, k).coeffs, getattr(cont, k).coeffs)


def test_scheme_config_validation():
    with pytest.raises(ValueError):
        SchemeConfig(tau=0.0)
    with pytest.raises(ValueError):
        SchemeConfig(tau=1e-3, eps1=-1.0)
    assert PenaltySet().sigma_diff == 2.0
