import math

import numpy as np
import pytest

from permflow import elliptic as ell
from permflow import velocity as vel
from permflow.evolution import Integrator, TimeIntegratorConfig
from permflow.geometry import BoundaryData, Profile, Term, build_grid, source_profile
from permflow.harness.verify import random_smooth_vorticity

LN2 = math.log(2.0)
A_EXACT = 2 * math.pi / LN2


@pytest.fixture(scope="module")
def basis64(grid64):
    return vel.HarmonicBasis.build(grid64)


def _const_b(inner, outer):
    return Profile((Term("const", inner),), (Term("const", outer),))


def test_gram_value_and_symmetry():
    g = build_grid(1, 2, 128, 256)
    b = vel.HarmonicBasis.build(g)
    np.testing.assert_allclose(A_EXACT, 9.0647, atol=5e-5)
    assert abs(b.A[0, 0] - A_EXACT) / A_EXACT <= 1e-3
    assert np.array_equal(b.A, b.A.T) and np.array_equal(b.gram, b.gram.T)
    assert b.min_eigenvalue > 0


@pytest.mark.parametrize("form", ["A", "gram"])
def test_gram_refinement_factor(form):
    errs = []
    for n in (16, 32, 64):
        b = vel.HarmonicBasis.build(build_grid(1, 2, n, 2 * n))
        errs.append(abs(getattr(b, form)[0, 0] - A_EXACT))
    assert errs[0] / errs[1] >= 3.5 and errs[1] / errs[2] >= 3.5, errs


def test_lambda_zero_for_potential_flow(grid64, basis64):
    bd = BoundaryData(a=source_profile(2 * math.pi, 1, 2))
    h_a = vel.potential_flow(grid64, bd, 0.0)
    lam = vel.initial_lambda(grid64, basis64, ell.grad(grid64, h_a), grid64.zeros(), h_a)
    assert abs(lam[0]) < 1e-12


def test_lambda_recovers_rotation_coefficient(grid64, basis64):
    c = -1.7
    lam = vel.initial_lambda(grid64, basis64, basis64.u[0] * c, grid64.zeros(), grid64.zeros())
    np.testing.assert_allclose(lam[0], c, rtol=1e-12)


def test_lambda_radial_vorticity_brute_force(grid64, basis64):
    g = grid64
    r, _ = g.mesh()
    omega = np.cos(math.pi * (r - 1.0))
    h_nu = ell.solve_dirichlet(g, omega)
    u_nu = ell.perp_grad(g, h_nu)
    lam = vel.initial_lambda(g, basis64, u_nu, omega, g.zeros())
    # naive quadratures: circulation on the inner circle and area integral of omega h_1
    circ = sum(u_nu.t[0, j] * g.r_inner * g.dtheta for j in range(g.n_theta))
    h1 = basis64.h[0]
    moment = sum(g.cell_area[i] * omega[i, j] * h1[i, j] for i in range(g.n_r + 1) for j in range(g.n_theta))
    f1 = circ + moment
    # the naive volume quadrature of omega h_1 differs from the solver's adjoint weights at O(h^2)
    np.testing.assert_allclose(lam[0], f1 / basis64.A[0, 0], atol=(1 / 64) ** 2)
    # u_nu carries no circulation of its own, so lambda vanishes
    assert abs(lam[0]) < 1e-12
    st = vel.assemble(g, basis64, 0.0, omega, lam, g.zeros())
    assert np.abs(ell.rot(g, st.v) - omega)[2:-2].max() < 1e-3


def test_reconstruct_zero(grid32):
    b = vel.HarmonicBasis.build(grid32)
    st = vel.reconstruct_velocity(grid32, b, grid32.zeros(), [0.0], BoundaryData(), 0.0)
    assert np.all(st.v.magnitude() == 0.0)


def test_reconstruct_rotation(grid64, basis64):
    r, _ = grid64.mesh()
    st = vel.reconstruct_velocity(grid64, basis64, grid64.zeros(), [1.0], BoundaryData(), 0.0)
    np.testing.assert_allclose(st.v.t, 1 / (r * LN2), rtol=1e-3)
    assert np.abs(st.v.r).max() < 1e-12


def test_reconstruct_radial_source(grid64, basis64):
    r, _ = grid64.mesh()
    bd = BoundaryData(a=source_profile(2 * math.pi, 1, 2))
    st = vel.reconstruct_velocity(grid64, basis64, grid64.zeros(), [0.0], bd, 0.0)
    np.testing.assert_allclose(st.v.r, 1 / r, atol=1e-3)
    assert np.abs(st.v.t).max() < 1e-10
    vn_inner, vn_outer = -st.v.r[0], st.v.r[-1]
    np.testing.assert_allclose(vn_inner, -1.0, atol=1e-3)
    np.testing.assert_allclose(vn_outer, 0.5, atol=1e-3)


def test_reconstruct_invariants(grid64, basis64):
    g = grid64
    rng = np.random.default_rng(11)
    omega = random_smooth_vorticity(g, rng)
    bd = BoundaryData(a=Profile((Term("sin", 0.3, 2),), (Term("cos", 0.5, 1),)))
    st = vel.reconstruct_velocity(g, basis64, omega, [0.4], bd, 0.0)
    a = bd.a_trace(g, 0.0)
    np.testing.assert_allclose(np.stack([-st.v.r[0], st.v.r[-1]]), a, atol=2e-3)
    scale = np.abs(st.v.magnitude()).max() / g.min_spacing()
    div_rot = ell.div(g, ell.perp_grad(g, st.h_nu + 0.4 * basis64.h[0]))
    assert np.abs(div_rot[1:-1]).max() <= 1e-10 * scale
    assert np.abs(ell.rot(g, st.v) - omega)[2:-2].max() < 5e-3


def test_roundtrip_random_vorticity(grid64, basis64):
    g = grid64
    rng = np.random.default_rng(7)
    omega = random_smooth_vorticity(g, rng)
    bd = BoundaryData(a=source_profile(2 * math.pi, 1, 2))
    st = vel.reconstruct_velocity(g, basis64, omega, [1.234], bd, 0.0)
    lam = vel.initial_lambda(g, basis64, st.v, omega, st.h_a)
    np.testing.assert_allclose(lam[0], 1.234, atol=1e-10)


def test_reconstruct_rejects_nonfinite(grid32):
    b = vel.HarmonicBasis.build(grid32)
    w = grid32.zeros()
    w[3, 3] = np.nan
    with pytest.raises(FloatingPointError):
        vel.reconstruct_velocity(grid32, b, w, [0.0], BoundaryData(), 0.0)


def test_lambda_rhs_steady_source(grid64, basis64):
    bd = BoundaryData(a=source_profile(2 * math.pi, 1, 2))
    st = vel.reconstruct_velocity(grid64, basis64, grid64.zeros(), [0.0], bd, 0.0)
    assert abs(vel.lambda_rhs(grid64, basis64, st, 0.0, bd)[0]) < 1e-12


def test_lambda_rhs_pure_rotation(grid64, basis64):
    st = vel.reconstruct_velocity(grid64, basis64, grid64.zeros(), [2.0], BoundaryData(), 0.0)
    assert abs(vel.lambda_rhs(grid64, basis64, st, 0.0, BoundaryData())[0]) < 1e-12


def _radial_state(g, basis, lam=0.5):
    r, _ = g.mesh()
    omega = 0.3 + np.cos(math.pi * (r - 1.0))
    b = _const_b(float(omega[0, 0]), float(omega[-1, 0]))
    bd = BoundaryData(b=b)
    return vel.reconstruct_velocity(g, basis, omega, [lam], bd, 0.0), bd


def test_lambda_rhs_viscous_closed_form():
    # radial omega with b = omega on the walls: dlam/dt = nu (b_outer - b_inner)
    nu = 0.01
    errs = []
    for n in (16, 32, 64):
        g = build_grid(1, 2, n, 2 * n)
        basis = vel.HarmonicBasis.build(g)
        st, bd = _radial_state(g, basis)
        exact = nu * (st.omega[-1, 0] - st.omega[0, 0])
        errs.append(abs(vel.lambda_rhs(g, basis, st, nu, bd)[0] - exact))
    assert errs[-1] < 1e-4 * nu * 2
    assert errs[0] / errs[1] > 3.0 and errs[1] / errs[2] > 3.0, errs


def test_lambda_rhs_matches_circulation_difference(grid64, basis64):
    g, nu = grid64, 0.01
    st, bd = _radial_state(g, basis64)
    rate = vel.lambda_rhs(g, basis64, st, nu, bd)[0]
    cfg = TimeIntegratorConfig(t_end=1.0)
    integ = Integrator(g, basis64, nu, bd, cfg)
    diffs = []
    for dt in (2e-3, 1e-3):
        s1, _ = integ.step(st, dt=dt)
        # circulation of v - grad h_a on the inner circle, minus the vorticity moment, is lambda A
        f0 = vel.circulation_data(g, basis64, st.v, st.omega, st.h_a)[0]
        f1 = vel.circulation_data(g, basis64, s1.v, s1.omega, s1.h_a)[0]
        diffs.append(abs((f1 - f0) / (dt * basis64.A[0, 0]) - rate))
    # agreement to O(dt + h^2); here the h^2 part dominates
    assert max(diffs) < (1 / 64) ** 2
