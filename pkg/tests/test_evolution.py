import math

import numpy as np
import pytest

from permflow import elliptic as ell
from permflow import velocity as vel
from permflow.evolution import (
    Integrator,
    MaximumPrincipleViolation,
    SolverAbort,
    TimeIntegratorConfig,
    run,
    snapshot_times,
)
from permflow.geometry import BoundaryData, Profile, Term, VectorField, build_grid, source_profile
from permflow.harness.verify import front_position, random_smooth_vorticity


def _const(inner, outer=None):
    outer = inner if outer is None else outer
    return Profile((Term("const", inner),), (Term("const", outer),))


@pytest.fixture(scope="module")
def g():
    return build_grid(1, 2, 32, 64)


@pytest.fixture(scope="module")
def basis(g):
    return vel.HarmonicBasis.build(g)


def _steps(integ, state, n, **kw):
    out = [state]
    for _ in range(n):
        state, _ = integ.step(state, **kw)
        out.append(state)
    return out


def test_config_validation():
    with pytest.raises(ValueError):
        TimeIntegratorConfig(t_end=1.0, scheme="lax")
    with pytest.raises(ValueError):
        TimeIntegratorConfig(t_end=-1.0)
    with pytest.raises(ValueError):
        TimeIntegratorConfig(t_end=1.0, cfl_advective=1.5)
    with pytest.raises(ValueError):
        TimeIntegratorConfig(t_end=1.0, dt_max=0.0)


def test_zero_velocity_leaves_omega_unchanged(g, basis):
    rng = np.random.default_rng(0)
    # a vorticity with zero velocity is not available, so drive the step with v = 0 by hand
    integ = Integrator(g, basis, 0.0, BoundaryData(), TimeIntegratorConfig(t_end=1.0))
    omega = rng.standard_normal(g.shape)
    zero = vel.FlowState(0.0, omega, np.zeros(1), VectorField.zeros(g), g.zeros(), g.zeros())
    s1, _ = integ.step(zero, dt=0.01)
    assert np.array_equal(s1.omega, omega)


@pytest.mark.parametrize("scheme", ["upwind1", "upwind2-minmod"])
def test_steady_rotation_is_stationary(g, basis, scheme):
    r, _ = g.mesh()
    omega0 = 0.5 * np.cos(math.pi * (r - 1.0))
    integ = Integrator(g, basis, 0.0, BoundaryData(), TimeIntegratorConfig(t_end=10.0, scheme=scheme))
    states = _steps(integ, integ.state(0.0, omega0, [1.0]), 100)
    drift = max(np.abs(s.omega - omega0).max() for s in states)
    assert drift <= 1e-12
    # the advective product vanishes pointwise
    st = states[0]
    assert np.abs(st.v.r).max() < 1e-12
    assert np.abs(st.v.t * ell.ddtheta(g, omega0)).max() < 1e-12


def test_constant_vorticity_with_matching_b(g, basis):
    c = 0.7
    bd = BoundaryData(b=_const(c))
    omega0 = np.full(g.shape, c)
    integ = Integrator(g, basis, 1e-2, bd, TimeIntegratorConfig(t_end=1.0))
    h_nu = ell.solve_dirichlet(g, omega0)
    lam0 = vel.initial_lambda(g, basis, ell.perp_grad(g, h_nu), omega0, g.zeros())
    states = _steps(integ, integ.state(0.0, omega0, lam0), 50)
    assert max(np.abs(s.omega - c).max() for s in states) < 1e-12


def test_radial_front():
    g = build_grid(1, 2, 256, 8)
    bd = BoundaryData(a=source_profile(2 * math.pi, 1, 2), b=_const(1.0))
    traj = run(g, g.zeros(), [0.0], 0.0, bd, TimeIntegratorConfig(t_end=0.5), [0.0, 0.5])
    w = traj.snapshots[-1].omega
    pos = front_position(g, w)
    assert abs(pos - math.sqrt(2.0)) <= 3 * g.dr[0]
    behind = g.r < math.sqrt(2.0) - 0.1
    ahead = g.r > math.sqrt(2.0) + 0.1
    assert np.all(w[behind] > 0.99) and np.all(np.abs(w[ahead]) < 1e-2)


def test_rest_state_series_zero():
    g = build_grid(1, 2, 16, 32)
    traj = run(g, g.zeros(), [0.0], 1e-3, BoundaryData(), TimeIntegratorConfig(t_end=0.2, dt_max=0.05))
    for k, col in traj.series.items():
        if k not in ("t", "dt"):
            assert np.all(col == 0.0), k


def test_steady_rotation_l2_constant(g, basis):
    r, _ = g.mesh()
    omega0 = 0.5 * np.cos(math.pi * (r - 1.0))
    traj = run(g, omega0, [1.0], 0.0, BoundaryData(), TimeIntegratorConfig(t_end=0.5), basis=basis)
    l2 = traj.series["l2"]
    assert np.abs(l2 - l2[0]).max() <= 1e-12


def test_viscous_decay_monotone(g, basis):
    rng = np.random.default_rng(2)
    omega0 = random_smooth_vorticity(g, rng)
    omega0[0] = omega0[-1] = 0.0
    lam0 = vel.initial_lambda(g, basis, ell.perp_grad(g, ell.solve_dirichlet(g, omega0)), omega0, g.zeros())
    traj = run(g, omega0, lam0, 1e-3, BoundaryData(), TimeIntegratorConfig(t_end=0.5), basis=basis)
    l2 = traj.series["l2"]
    assert np.all(np.diff(l2) <= 1e-14 * l2[0])


def test_conservation_impermeable(g, basis):
    rng = np.random.default_rng(4)
    omega0 = random_smooth_vorticity(g, rng)
    integ = Integrator(g, basis, 0.0, BoundaryData(), TimeIntegratorConfig(t_end=1.0))
    states = _steps(integ, integ.state(0.0, omega0, [0.8]), 30)
    total = [ell.integrate(g, s.omega) for s in states]
    assert np.abs(np.diff(total)).max() <= 1e-12


@pytest.mark.parametrize("scheme", ["upwind1", "upwind2-minmod"])
def test_dt_respects_cfl_and_cap(g, basis, scheme):
    bd = BoundaryData(a=source_profile(2 * math.pi, 1, 2))
    cfg = TimeIntegratorConfig(t_end=1.0, cfl_advective=0.3, dt_max=5e-3, scheme=scheme)
    integ = Integrator(g, basis, 0.0, bd, cfg)
    st = integ.state(0.0, g.zeros(), [1.0])
    for _ in range(5):
        st2, dt = integ.step(st)
        speed = np.abs(st.v.magnitude()).max()
        assert dt <= cfg.cfl_advective * g.min_spacing() / speed * (1 + 1e-9)
        assert dt <= cfg.dt_max
        st = st2


def test_max_principle_with_inflow(g, basis):
    bd = BoundaryData(a=Profile((), (Term("cos", 0.5, 1),)), b=_const(0.0, 2.0))
    r, th = g.mesh()
    omega0 = np.exp(-((r - 1.5) ** 2) / 0.05) * np.cos(th)
    traj = run(g, omega0, [0.3], 0.0, bd, TimeIntegratorConfig(t_end=0.5), basis=basis)
    lo = min(omega0.min(), 0.0)
    hi = max(omega0.max(), 2.0)
    assert traj.series["omega_min"].min() >= lo - 1e-12
    assert traj.series["omega_max"].max() <= hi + 1e-12


def test_max_principle_violation_is_fatal(g, basis):
    integ = Integrator(g, basis, 0.0, BoundaryData(), TimeIntegratorConfig(t_end=1.0))
    st = integ.state(0.0, g.zeros(), [1.0])
    integ.envelope = (0.0, 0.0)
    bad = vel.FlowState(0.0, st.omega + np.where(np.arange(g.n_theta) == 3, 1.0, 0.0), st.lam, st.v, st.h_nu, st.h_a)
    with pytest.raises(MaximumPrincipleViolation):
        integ.step(bad)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_aborts_with_step_index(g, basis):
    integ = Integrator(g, basis, 0.0, BoundaryData(), TimeIntegratorConfig(t_end=1.0))
    st = integ.state(0.0, g.zeros(), [1.0])
    w = st.omega.copy()
    w[5, 5] = np.inf
    with pytest.raises(SolverAbort) as exc:
        integ.step(vel.FlowState(0.0, w, st.lam, st.v, st.h_nu, st.h_a))
    assert exc.value.step == 1
    assert "non-finite" in str(exc.value)


def test_dt_underflow_aborts(g, basis):
    bd = BoundaryData(a=source_profile(2 * math.pi, 1, 2))
    integ = Integrator(g, basis, 0.0, bd, TimeIntegratorConfig(t_end=1.0, dt_min=0.5))
    with pytest.raises(SolverAbort, match="underflow"):
        integ.step(integ.state(0.0, g.zeros(), [0.0]))


def test_stable_across_viscosities(g, basis):
    rng = np.random.default_rng(9)
    omega0 = random_smooth_vorticity(g, rng)
    bd = BoundaryData(b=_const(0.2, -0.1))
    for nu in (1e-5, 1e-3, 1e-1):
        traj = run(g, omega0, [0.5], nu, bd, TimeIntegratorConfig(t_end=0.2), basis=basis)
        assert traj.series["dt"][1:].min() > 1e-4
        assert np.all(np.isfinite(traj.series["l2"]))


def test_run_schedule(g, basis):
    cfg = TimeIntegratorConfig(t_end=0.3)
    sched = snapshot_times(0.3, 4)
    traj = run(g, g.zeros(), [1.0], 0.0, BoundaryData(), cfg, sched, basis)
    np.testing.assert_allclose(traj.times, sched, atol=1e-15)
    with pytest.raises(ValueError):
        run(g, g.zeros(), [1.0], 0.0, BoundaryData(), cfg, [0.0, 0.5], basis)
    with pytest.raises(ValueError):
        snapshot_times(1.0, 1)


def test_incompatible_data_rejected(g, basis):
    from permflow.geometry import CompatibilityError

    bd = BoundaryData(a=_const(-1.0, 1.0))
    with pytest.raises(CompatibilityError):
        run(g, g.zeros(), [0.0], 0.0, bd, TimeIntegratorConfig(t_end=0.1), basis=basis)
