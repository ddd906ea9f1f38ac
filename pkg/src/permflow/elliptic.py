"""Discrete operators and fast elliptic solvers on the annular mesh.

The Laplacian is the control-volume stencil: a compact three-point flux
difference in ``r`` and the compact second difference in ``theta``.  It is
diagonalised in ``theta`` by the real FFT, leaving one tridiagonal radial
system per angular mode.

Pointwise derivatives (``ddr``, ``ddtheta`` and the gradient/curl family
built on them) are fourth-order five-point differences, with the radial
window shifted inward next to the circles.  ``ddr`` and ``ddtheta`` act on
different axes and commute, so ``div(perp_grad(h))`` vanishes to round-off.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import INNER, OUTER, CompatibilityError, Grid, VectorField

# ---------------------------------------------------------------------------
# pointwise difference operators


def _fd_weights(x: np.ndarray, at: float) -> np.ndarray:
    """First-derivative weights at ``at`` for the interpolant through nodes ``x``."""
    n = len(x)
    V = np.vander(x - at, n, increasing=True).T
    rhs = np.zeros(n)
    rhs[1] = 1.0
    return np.linalg.solve(V, rhs)


_STENCIL = 5


@lru_cache(maxsize=32)
def _ddr_weights(grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Five-point fourth-order weights per row; windows shift inward near the circles."""
    r = grid.r
    n = len(r)
    lo = np.clip(np.arange(n) - _STENCIL // 2, 0, n - _STENCIL)
    w = np.array([_fd_weights(r[k : k + _STENCIL], r[i]) for i, k in enumerate(lo)])
    return lo, w


def ddr(grid: Grid, f: np.ndarray) -> np.ndarray:
    lo, w = _ddr_weights(grid)
    idx = lo[:, None] + np.arange(_STENCIL)
    return np.einsum("ik,ik...->i...", w, f[idx])


def ddtheta(grid: Grid, f: np.ndarray) -> np.ndarray:
    d1 = np.roll(f, -1, axis=-1) - np.roll(f, 1, axis=-1)
    d2 = np.roll(f, -2, axis=-1) - np.roll(f, 2, axis=-1)
    return (8.0 * d1 - d2) / (12.0 * grid.dtheta)


def grad(grid: Grid, h: np.ndarray) -> VectorField:
    return VectorField(ddr(grid, h), ddtheta(grid, h) / grid.r[:, None])


def perp_grad(grid: Grid, h: np.ndarray) -> VectorField:
    """``(d_2 h, -d_1 h)`` in polar components: ``(h_theta / r, -h_r)``."""
    return VectorField(ddtheta(grid, h) / grid.r[:, None], -ddr(grid, h))


def div(grid: Grid, v: VectorField) -> np.ndarray:
    r = grid.r[:, None]
    return (ddr(grid, r * v.r) + ddtheta(grid, v.t)) / r


def rot(grid: Grid, v: VectorField) -> np.ndarray:
    r = grid.r[:, None]
    return (ddr(grid, r * v.t) - ddtheta(grid, v.r)) / r


def strain(grid: Grid, v: VectorField) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Polar components ``(e_rr, e_tt, e_rt)`` of ``D(v) = (grad v + grad v^T) / 2``."""
    r = grid.r[:, None]
    e_rr = ddr(grid, v.r)
    e_tt = (ddtheta(grid, v.t) + v.r) / r
    e_rt = 0.5 * (ddr(grid, v.t) - v.t / r + ddtheta(grid, v.r) / r)
    return e_rr, e_tt, e_rt


def strain_product(grid: Grid, v: VectorField, u: VectorField) -> np.ndarray:
    """Pointwise ``D(v) : D(u)``."""
    a = strain(grid, v)
    b = strain(grid, u)
    return a[0] * b[0] + a[1] * b[1] + 2.0 * a[2] * b[2]


def integrate(grid: Grid, f: np.ndarray) -> float:
    """Area quadrature over the control volumes."""
    return float(np.sum(grid.cell_area[:, None] * f))


def lp_norm(grid: Grid, f: np.ndarray, p: float) -> float:
    """``(int |f|^p)^(1/p)``; ``p = inf`` gives the nodal maximum."""
    if np.isinf(p):
        return float(np.abs(f).max())
    return integrate(grid, np.abs(f) ** p) ** (1.0 / p)


def face_coefficients(grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Control-volume face transmissibilities.

    ``radial[i]`` multiplies ``f[i+1] - f[i]`` on the face between rows ``i``
    and ``i+1``; ``angular[i]`` multiplies ``f[i, j+1] - f[i, j]``.  Summing
    the resulting fluxes around a cell gives ``cell_area * laplacian``.
    """
    radial = grid.rho_plus[:-1] * grid.dtheta / grid.dr
    angular = (grid.rho_plus - grid.rho_minus) / (grid.r * grid.dtheta)
    return radial, angular


def dirichlet_energy(grid: Grid, f: np.ndarray) -> float:
    """Face-based ``int |grad f|^2``, the quadratic form of the control-volume Laplacian."""
    cr, ca = face_coefficients(grid)
    dr = np.diff(f, axis=0)
    dt = np.roll(f, -1, axis=1) - f
    return float(np.sum(cr[:, None] * dr**2) + np.sum(ca[:, None] * dt**2))


def boundary_integral(grid: Grid, trace: np.ndarray) -> np.ndarray:
    """Arc-length integrals of a ``(2, n_theta)`` trace, one per circle [inner, outer]."""
    return grid.dtheta * grid.radii * trace.sum(axis=-1)


def boundary_trace(f: np.ndarray) -> np.ndarray:
    return np.stack([f[0], f[-1]])


# ---------------------------------------------------------------------------
# control-volume Laplacian, per angular mode


@dataclass(frozen=True)
class RadialStencil:
    """Row coefficients of the control-volume Laplacian.

    For angular mode ``m`` row ``i`` reads
    ``lo[i] f[i-1] + (mid[i] + ang[i] * mu[m]) f[i] + hi[i] f[i+1]``
    with ``mu[m] = 4 sin^2(pi m / n_theta) / dtheta^2``.  Rows 0 and ``n_r``
    are the half-cell balances without the boundary face (which carries the
    Neumann datum).
    """

    lo: np.ndarray
    mid: np.ndarray
    hi: np.ndarray
    ang: np.ndarray
    mu: np.ndarray

    @classmethod
    def build(cls, grid: Grid) -> "RadialStencil":
        r, rm, rp = grid.r, grid.rho_minus, grid.rho_plus
        area = 0.5 * (rp**2 - rm**2)  # per unit angle
        lo = np.zeros_like(r)
        hi = np.zeros_like(r)
        lo[1:] = rm[1:] / grid.dr
        hi[:-1] = rp[:-1] / grid.dr
        mid = -(lo + hi)
        ang = -((rp - rm) / r)
        m = np.arange(grid.n_theta // 2 + 1)
        mu = (2.0 * np.sin(np.pi * m / grid.n_theta) / grid.dtheta) ** 2
        return cls(lo / area, mid / area, hi / area, ang / area, mu)

    def diag(self) -> np.ndarray:
        return self.mid[None, :] + self.ang[None, :] * self.mu[:, None]

    def apply(self, fhat: np.ndarray) -> np.ndarray:
        """Apply the mode-wise Laplacian to modal data of shape (modes, n_r + 1)."""
        out = self.diag() * fhat
        out[:, 1:] += self.lo[None, 1:] * fhat[:, :-1]
        out[:, :-1] += self.hi[None, :-1] * fhat[:, 1:]
        return out


@lru_cache(maxsize=32)
def radial_stencil(grid: Grid) -> RadialStencil:
    return RadialStencil.build(grid)


def laplacian(grid: Grid, f: np.ndarray) -> np.ndarray:
    """Control-volume Laplacian on interior rows (boundary rows set to 0)."""
    st = radial_stencil(grid)
    lap = np.zeros_like(f, dtype=float)
    d2t = (np.roll(f, -1, axis=1) - 2 * f + np.roll(f, 1, axis=1)) / grid.dtheta**2
    lap[1:-1] = (
        st.lo[1:-1, None] * f[:-2]
        + st.mid[1:-1, None] * f[1:-1]
        + st.hi[1:-1, None] * f[2:]
        - st.ang[1:-1, None] * d2t[1:-1]
    )
    return lap


# ---------------------------------------------------------------------------
# batched tridiagonal solves


def _thomas_factor(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = b.shape[1]
    cp = np.zeros_like(b)
    den = np.zeros_like(b)
    den[:, 0] = b[:, 0]
    cp[:, 0] = c[:, 0] / den[:, 0]
    for i in range(1, n):
        den[:, i] = b[:, i] - a[:, i] * cp[:, i - 1]
        cp[:, i] = c[:, i] / den[:, i]
    return cp, den


def _thomas_solve(a: np.ndarray, cp: np.ndarray, den: np.ndarray, d: np.ndarray) -> np.ndarray:
    n = d.shape[1]
    y = np.empty_like(d)
    y[:, 0] = d[:, 0] / den[:, 0]
    for i in range(1, n):
        y[:, i] = (d[:, i] - a[:, i] * y[:, i - 1]) / den[:, i]
    for i in range(n - 2, -1, -1):
        y[:, i] -= cp[:, i] * y[:, i + 1]
    return y


class PoissonSolverPlan:
    """Factorised mode-wise systems ``(shift I - scale L_m) f = rhs``.

    ``kind='dirichlet'`` replaces both boundary rows by identities.
    ``kind='neumann'`` keeps the half-cell balances there; the singular
    mode 0 is pinned by ``f[0] = 0`` and the caller removes the mean.
    """

    def __init__(self, grid: Grid, kind: str = "dirichlet", shift: float = 0.0, scale: float = 1.0):
        if kind not in ("dirichlet", "neumann"):
            raise ValueError(f"unknown boundary kind {kind!r}")
        self.grid, self.kind, self.shift, self.scale = grid, kind, shift, scale
        st = radial_stencil(grid)
        nm = st.mu.size
        n = grid.n_r + 1
        a = np.broadcast_to(-scale * st.lo, (nm, n)).copy()
        c = np.broadcast_to(-scale * st.hi, (nm, n)).copy()
        b = shift - scale * st.diag()
        if kind == "dirichlet":
            for row in (0, -1):
                a[:, row], b[:, row], c[:, row] = 0.0, 1.0, 0.0
        else:
            if shift == 0.0:
                a[0, 0], b[0, 0], c[0, 0] = 0.0, 1.0, 0.0
        self._a = a
        self._cp, self._den = _thomas_factor(a, b, c)

    def solve_modal(self, rhs_hat: np.ndarray) -> np.ndarray:
        return _thomas_solve(self._a, self._cp, self._den, rhs_hat)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve with physical-space right-hand side (boundary rows already set)."""
        rhs_hat = np.fft.rfft(rhs, axis=1).T
        f_hat = self.solve_modal(np.ascontiguousarray(rhs_hat))
        return np.fft.irfft(f_hat.T, n=self.grid.n_theta, axis=1)


@lru_cache(maxsize=32)
def dirichlet_plan(grid: Grid) -> PoissonSolverPlan:
    return PoissonSolverPlan(grid, "dirichlet")


@lru_cache(maxsize=32)
def neumann_plan(grid: Grid) -> PoissonSolverPlan:
    return PoissonSolverPlan(grid, "neumann")


def _check_shape(grid: Grid, f: np.ndarray, name: str, shape: tuple) -> None:
    if np.shape(f) != shape:
        raise ValueError(f"{name} has shape {np.shape(f)}, grid expects {shape}")


def solve_dirichlet(grid: Grid, f, g_inner=0.0, g_outer=0.0) -> np.ndarray:
    """Solve ``-L h = f`` in the interior with ``h = g`` on the two circles.

    ``f`` may be a scalar or a field; traces may be scalars or length-``n_theta`` arrays.
    """
    nt = grid.n_theta
    f = np.broadcast_to(np.asarray(f, dtype=float), grid.shape) if np.ndim(f) == 0 else np.asarray(f, float)
    _check_shape(grid, f, "right-hand side", grid.shape)
    g_in = np.broadcast_to(np.asarray(g_inner, float), (nt,))
    g_out = np.broadcast_to(np.asarray(g_outer, float), (nt,))
    rhs = np.array(f, dtype=float)
    rhs[0], rhs[-1] = g_in, g_out
    return dirichlet_plan(grid).solve(rhs)


def solve_neumann(grid: Grid, a_trace: np.ndarray, check: bool = True) -> np.ndarray:
    """Harmonic ``h`` with ``dh/dn = a`` on both circles and zero area mean.

    ``a_trace`` has shape ``(2, n_theta)`` ordered [inner, outer].
    """
    a_trace = np.asarray(a_trace, dtype=float)
    _check_shape(grid, a_trace, "normal-flux trace", (2, grid.n_theta))
    if check:
        res = float(boundary_integral(grid, a_trace).sum())
        amax = float(np.abs(a_trace).max())
        tol = 1e-10 * amax if amax > 0 else 1e-14
        if abs(res) > tol:
            raise CompatibilityError(res, tol)
    if not np.any(a_trace):
        return grid.zeros()
    area = 0.5 * (grid.rho_plus**2 - grid.rho_minus**2)
    rhs = grid.zeros()
    rhs[0] = grid.r_inner * a_trace[INNER] / area[0]
    rhs[-1] = grid.r_outer * a_trace[OUTER] / area[-1]
    rhs_hat = np.ascontiguousarray(np.fft.rfft(rhs, axis=1).T)
    rhs_hat[0, 0] = 0.0
    h = np.fft.irfft(neumann_plan(grid).solve_modal(rhs_hat).T, n=grid.n_theta, axis=1)
    return h - integrate(grid, h) / grid.total_area


def harmonic_basis(grid: Grid) -> tuple[np.ndarray, VectorField]:
    """``h_1`` (1 on the inner circle, 0 on the outer) and ``u_1 = perp_grad(h_1)``."""
    h1 = solve_dirichlet(grid, 0.0, 1.0, 0.0)
    return h1, perp_grad(grid, h1)


def harmonic_lift(grid: Grid, b_trace: np.ndarray) -> np.ndarray:
    """Discrete harmonic extension of a ``(2, n_theta)`` Dirichlet trace."""
    b_trace = np.asarray(b_trace, dtype=float)
    _check_shape(grid, b_trace, "Dirichlet trace", (2, grid.n_theta))
    return solve_dirichlet(grid, 0.0, b_trace[INNER], b_trace[OUTER])
