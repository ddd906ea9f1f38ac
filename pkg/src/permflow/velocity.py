"""Velocity from vorticity, circulations and boundary flux.

``v = perp_grad(h_nu) + sum_k lam_k u_k + grad(h_a)`` where ``h_nu`` solves the
homogeneous Dirichlet problem for the vorticity, ``u_k = perp_grad(h_k)`` are
the harmonic circulation fields and ``h_a`` is the zero-mean Neumann
potential of the normal-velocity datum.  The circulation coefficients are
state variables advanced by ``A dlam/dt = fbar``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import elliptic as ell
from .geometry import INNER, OUTER, BoundaryData, Grid, VectorField


class BasisError(RuntimeError):
    pass


def gram_matrix(grid: Grid, u: list[VectorField]) -> np.ndarray:
    n = len(u)
    A = np.zeros((n, n))
    for i in range(n):
        for k in range(i, n):
            A[i, k] = A[k, i] = ell.integrate(grid, u[i].dot(u[k]))
    return A


def circulation(grid: Grid, v: VectorField) -> float:
    """``int_{S_1} v . s`` on the inner circle, where ``s = +e_theta``."""
    return grid.r_inner * grid.dtheta * float(np.sum(v.t[0]))


def green_weights(grid: Grid) -> np.ndarray:
    """Radial weights ``W`` with ``sum W omega = -int_{S_1} perp_grad(solve_dirichlet(omega)) . s``.

    By Green's identity the right side equals ``int omega h_1``, so ``W`` is
    that quadrature made exact for the discrete solver.  The functional only
    sees the angular mean of each row, hence one weight per row.
    """
    n = grid.n_r + 1
    W = np.zeros(n)
    for i in range(1, n - 1):
        e = grid.zeros()
        e[i] = 1.0
        W[i] = -circulation(grid, ell.perp_grad(grid, ell.solve_dirichlet(grid, e)))
    return W / grid.n_theta


@dataclass(frozen=True, eq=False)
class HarmonicBasis:
    """Circulation fields with their Gram matrix.

    ``A`` is assembled in its boundary form ``A_ik = int_{S_i} u_k . s``,
    equal to ``int u_i . u_k`` by Green's identity; ``gram`` keeps the volume
    quadrature of the same matrix for comparison.
    """

    grid: Grid
    h: tuple[np.ndarray, ...]
    u: tuple[VectorField, ...]
    weights: tuple[np.ndarray, ...]
    A: np.ndarray
    gram: np.ndarray
    chol: np.ndarray
    min_eigenvalue: float

    @classmethod
    def build(cls, grid: Grid) -> "HarmonicBasis":
        h1, u1 = ell.harmonic_basis(grid)
        A = np.array([[circulation(grid, u1)]])
        eig = float(np.linalg.eigvalsh(A).min())
        if not eig > 0:
            raise BasisError(f"Gram matrix not positive definite (min eigenvalue {eig:.3e})")
        return cls(grid, (h1,), (u1,), (green_weights(grid),), A, gram_matrix(grid, [u1]), np.linalg.cholesky(A), eig)

    @property
    def n(self) -> int:
        return len(self.h)

    def solve(self, f: np.ndarray) -> np.ndarray:
        y = np.linalg.solve(self.chol, f)
        return np.linalg.solve(self.chol.T, y)

    def vorticity_moments(self, omega: np.ndarray) -> np.ndarray:
        """``int omega h_k`` for each k."""
        return np.array([float(np.sum(w[:, None] * omega)) for w in self.weights])


@dataclass(frozen=True)
class FlowState:
    """One time slice.  ``v`` and the potentials are derived from ``omega``, ``lam`` and ``a``."""

    t: float
    omega: np.ndarray
    lam: np.ndarray
    v: VectorField
    h_nu: np.ndarray
    h_a: np.ndarray


def potential_flow(grid: Grid, bd: BoundaryData, t: float) -> np.ndarray:
    return ell.solve_neumann(grid, bd.a_trace(grid, t))


def assemble(grid: Grid, basis: HarmonicBasis, t: float, omega: np.ndarray, lam, h_a: np.ndarray) -> FlowState:
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    h_nu = ell.solve_dirichlet(grid, omega, 0.0, 0.0)
    psi = h_nu + sum(l * h for l, h in zip(lam, basis.h))
    v = ell.perp_grad(grid, psi) + ell.grad(grid, h_a)
    return FlowState(t, omega, lam, v, h_nu, h_a)


def reconstruct_velocity(
    grid: Grid, basis: HarmonicBasis, omega: np.ndarray, lam, bd: BoundaryData, t: float
) -> FlowState:
    if not np.all(np.isfinite(omega)):
        raise FloatingPointError("non-finite vorticity")
    return assemble(grid, basis, t, omega, lam, potential_flow(grid, bd, t))


def non_circulating(grid: Grid, state: FlowState) -> VectorField:
    """``u_nu + a`` of the decomposition."""
    return ell.perp_grad(grid, state.h_nu) + ell.grad(grid, state.h_a)


def circulation_data(grid: Grid, basis: HarmonicBasis, v: VectorField, omega: np.ndarray, h_a: np.ndarray) -> np.ndarray:
    """Right-hand side ``f_k = int_{S_k} (v - grad h_a) . s + int omega h_k``."""
    circ = circulation(grid, v - ell.grad(grid, h_a))
    return circ + basis.vorticity_moments(omega)


def initial_lambda(grid: Grid, basis: HarmonicBasis, v0: VectorField, omega0: np.ndarray, h_a: np.ndarray) -> np.ndarray:
    return basis.solve(circulation_data(grid, basis, v0, omega0, h_a))


def slip_datum(grid: Grid, bd: BoundaryData, t: float) -> np.ndarray:
    """``g = b + 2 da/dtau`` per circle, with ``tau = (-n_2, n_1)``.

    ``d/dtau = -(1/R) d/dtheta`` on the inner circle and ``+(1/R) d/dtheta`` on the outer.
    """
    b = bd.b_trace(grid, t)
    da = bd.a.trace_dtheta(grid.theta, t)
    orient = np.array([-1.0, 1.0])[:, None] / grid.radii[:, None]
    return b + 2.0 * orient * da


def lambda_rhs(
    grid: Grid,
    basis: HarmonicBasis,
    state: FlowState,
    nu: float,
    bd: BoundaryData,
    dXdt: VectorField | None = None,
    parts: bool = False,
):
    """``dlam/dt = A^-1 fbar`` with

    ``fbar_i = -int dXdt . u_i - int omega (v x u_i)
    + nu sum_circles int (g - 2 k v.tau)(u_i.tau) ds - 2 nu int D(v):D(u_i)``

    where ``X = u_nu + a``.  ``dXdt=None`` drops the first term.  With
    ``parts=True`` the four contributions are returned as a dict as well.
    """
    v, omega = state.v, state.omega
    terms = {"time": [], "advect": [], "boundary": [], "strain": []}
    g = slip_datum(grid, bd, state.t) if nu else None
    ds = grid.radii * grid.dtheta
    kappa = grid.curvature
    for u in basis.u:
        terms["time"].append(-ell.integrate(grid, dXdt.dot(u)) if dXdt is not None else 0.0)
        terms["advect"].append(-ell.integrate(grid, omega * v.cross(u)))
        if nu:
            # v.tau and u.tau flip sign together on the inner circle, so their product is v_t u_t
            bnd = 0.0
            for k, row in ((INNER, 0), (OUTER, -1)):
                tau = -1.0 if k == INNER else 1.0
                u_tau = tau * u.t[row]
                bnd += ds[k] * np.sum(g[k] * u_tau - 2.0 * kappa[k] * v.t[row] * u.t[row])
            terms["boundary"].append(nu * bnd)
            terms["strain"].append(-2.0 * nu * ell.integrate(grid, ell.strain_product(grid, v, u)))
        else:
            terms["boundary"].append(0.0)
            terms["strain"].append(0.0)
    fbar = sum(np.array(t) for t in terms.values())
    dlam = basis.solve(fbar)
    if parts:
        return dlam, {k: np.array(t) for k, t in terms.items()}
    return dlam
