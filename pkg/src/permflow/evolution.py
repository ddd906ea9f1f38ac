"""Time stepping for the vorticity equation on the annulus.

Each step is split: explicit conservative upwind advection of ``omega`` by
the face fluxes of ``v``, then (for ``nu > 0``) a per-mode Crank-Nicolson
diffusion solve with ``omega = b`` on both circles.  For ``nu = 0`` only the
inflow nodes receive ``b``.  The circulation coefficients follow
``A dlam/dt = fbar`` with the same explicit staging as the advection.

Face fluxes are built so that every control volume balances exactly: the
rotational part from corner values of the stream function (the fluxes
telescope) and the potential part from the control-volume gradient of
``h_a``, whose boundary faces carry ``R dtheta a``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import elliptic as ell
from . import velocity as vel
from .geometry import INFLOW, INNER, OUTER, BoundaryData, Grid, classify_boundary
from .velocity import FlowState, HarmonicBasis

SCHEMES = ("upwind1", "upwind2-minmod")


class SolverAbort(RuntimeError):
    """Raised when a step cannot be completed; carries the step index and time."""

    def __init__(self, reason: str, step: int, t: float):
        super().__init__(f"step {step} (t={t:.6g}): {reason}")
        self.reason, self.step, self.t = reason, step, t


class MaximumPrincipleViolation(SolverAbort):
    pass


@dataclass(frozen=True)
class TimeIntegratorConfig:
    t_end: float
    cfl_advective: float = 0.4
    dt_max: float = math.inf
    scheme: str = "upwind1"
    diffusion: str = "crank-nicolson"
    check_every: int = 10
    dt_min: float = 1e-12
    norms: tuple[float, ...] = (2.0, 4.0, 8.0)

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.diffusion != "crank-nicolson":
            raise ValueError("only crank-nicolson diffusion is implemented")
        if not (self.t_end > 0 and math.isfinite(self.t_end)):
            raise ValueError("t_end must be positive and finite")
        if not 0 < self.cfl_advective <= 1:
            raise ValueError("cfl_advective must lie in (0, 1]")
        if not self.dt_max > 0:
            raise ValueError("dt_max must be positive")
        if self.check_every < 1:
            raise ValueError("check_every must be >= 1")


# ---------------------------------------------------------------------------
# face fluxes


@dataclass(frozen=True)
class FaceFluxes:
    """Volume fluxes through the control-volume faces.

    ``radial[i, j]``: through the face between rows ``i`` and ``i+1``, positive
    along ``+e_r``.  ``angular[i, j]``: through the face between columns ``j``
    and ``j+1`` of row ``i``, positive along ``+e_theta``.  ``wall[k, j]``:
    outward through circle ``k``.
    """

    radial: np.ndarray
    angular: np.ndarray
    wall: np.ndarray

    def net_outflow(self) -> np.ndarray:
        out = np.zeros((self.radial.shape[0] + 1, self.radial.shape[1]))
        out[:-1] += self.radial
        out[1:] -= self.radial
        out += self.angular - np.roll(self.angular, 1, axis=1)
        out[0] += self.wall[INNER]
        out[-1] += self.wall[OUTER]
        return out

    def inflow(self) -> np.ndarray:
        """Total incoming flux of each control volume."""
        neg = lambda x: np.maximum(-x, 0.0)  # noqa: E731
        pos = lambda x: np.maximum(x, 0.0)  # noqa: E731
        inc = np.zeros((self.radial.shape[0] + 1, self.radial.shape[1]))
        inc[:-1] += neg(self.radial)
        inc[1:] += pos(self.radial)
        inc += neg(self.angular) + pos(np.roll(self.angular, 1, axis=1))
        inc[0] += neg(self.wall[INNER])
        inc[-1] += neg(self.wall[OUTER])
        return inc


def face_fluxes(grid: Grid, psi: np.ndarray, h_a: np.ndarray, a_trace: np.ndarray) -> FaceFluxes:
    """Fluxes of ``perp_grad(psi) + grad(h_a)`` through every face."""
    # stream function at cell corners: 4-node averages inside, 2-node on the walls
    nxt = np.roll(psi, -1, axis=1)
    wall_pts = 0.5 * (psi + nxt)
    corner = 0.5 * (wall_pts[:-1] + wall_pts[1:])
    radial = corner - np.roll(corner, 1, axis=1)
    upper = np.concatenate([corner, wall_pts[-1:]])
    lower = np.concatenate([wall_pts[:1], corner])
    angular = -(upper - lower)
    wall_rot = wall_pts[[0, -1]] - np.roll(wall_pts[[0, -1]], 1, axis=1)
    wall = np.stack([-wall_rot[0], wall_rot[1]])

    cr, ca = ell.face_coefficients(grid)
    radial = radial + cr[:, None] * np.diff(h_a, axis=0)
    angular = angular + ca[:, None] * (np.roll(h_a, -1, axis=1) - h_a)
    wall = wall + grid.dtheta * grid.radii[:, None] * a_trace
    return FaceFluxes(radial, angular, wall)


def _minmod(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def _face_states(grid: Grid, omega: np.ndarray, second_order: bool):
    """Reconstructed values at the (+r, -r, +theta, -theta) faces of each cell."""
    if not second_order:
        return omega, omega, omega, omega
    sr = np.zeros_like(omega)
    fwd = np.diff(omega, axis=0) / grid.dr[:, None]
    sr[1:-1] = _minmod(fwd[1:], fwd[:-1])
    r = grid.r[:, None]
    rp = omega + sr * (grid.rho_plus[:, None] - r)
    rm = omega - sr * (r - grid.rho_minus[:, None])
    st = _minmod(np.roll(omega, -1, axis=1) - omega, omega - np.roll(omega, 1, axis=1))
    return rp, rm, omega + 0.5 * st, omega - 0.5 * st


def advect(grid: Grid, omega: np.ndarray, flux: FaceFluxes, b_trace: np.ndarray, dt: float, second_order: bool = False) -> np.ndarray:
    """One explicit conservative upwind step; inflow wall faces carry ``b``."""
    rp, rm, tp, tm = _face_states(grid, omega, second_order)
    w_r = np.where(flux.radial > 0, rp[:-1], rm[1:])
    w_t = np.where(flux.angular > 0, tp, np.roll(tm, -1, axis=1))
    w_in = np.where(flux.wall[INNER] > 0, rm[0], b_trace[INNER])
    w_out = np.where(flux.wall[OUTER] > 0, rp[-1], b_trace[OUTER])
    F_r = flux.radial * w_r
    F_t = flux.angular * w_t
    net = np.zeros_like(omega)
    net[:-1] += F_r
    net[1:] -= F_r
    net += F_t - np.roll(F_t, 1, axis=1)
    net[0] += flux.wall[INNER] * w_in
    net[-1] += flux.wall[OUTER] * w_out
    return omega - dt * net / grid.cell_area[:, None]


# ---------------------------------------------------------------------------
# trajectory


@dataclass
class Trajectory:
    grid: Grid
    nu: float
    bd: BoundaryData
    cfg: TimeIntegratorConfig
    snapshots: list[FlowState] = field(default_factory=list)
    series: dict[str, np.ndarray] = field(default_factory=dict)
    initial_rot_defect: float = 0.0

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    @property
    def steps(self) -> int:
        return max(len(self.series.get("t", ())) - 1, 0)


def norm_columns(p: float) -> str:
    return "linf" if np.isinf(p) else f"l{int(p) if float(p).is_integer() else p}"


class Integrator:
    """Stateful stepper for one trajectory: caches solver plans and the max-principle envelope."""

    def __init__(self, grid: Grid, basis: HarmonicBasis, nu: float, bd: BoundaryData, cfg: TimeIntegratorConfig):
        if nu < 0 or not math.isfinite(nu):
            raise ValueError("viscosity must be finite and >= 0")
        self.grid, self.basis, self.nu, self.bd, self.cfg = grid, basis, float(nu), bd, cfg
        self.second_order = cfg.scheme == "upwind2-minmod"
        self.n_step = 0
        self._plan_key = None
        self._plan = None
        self._ha_cache: dict[float, np.ndarray] = {}
        self.envelope: tuple[float, float] | None = None

    # -- potentials --------------------------------------------------------
    def h_a(self, t: float) -> np.ndarray:
        if self.bd.a.ramp.constant:
            t = 0.0
        h = self._ha_cache.get(t)
        if h is None:
            h = vel.potential_flow(self.grid, self.bd, t)
            if len(self._ha_cache) > 4:
                self._ha_cache.clear()
            self._ha_cache[t] = h
        return h

    def state(self, t: float, omega: np.ndarray, lam) -> FlowState:
        return vel.assemble(self.grid, self.basis, t, omega, lam, self.h_a(t))

    def fluxes(self, state: FlowState) -> FaceFluxes:
        psi = state.h_nu + sum(l * h for l, h in zip(state.lam, self.basis.h))
        return face_fluxes(self.grid, psi, state.h_a, self.bd.a_trace(self.grid, state.t))

    # -- step size -----------------------------------------------------------
    def stable_dt(self, flux: FaceFluxes) -> float:
        g = self.grid
        r_len = g.dr.min()
        arc = g.r[0] * g.dtheta
        speed = max(
            float(np.abs(flux.radial).max() / (g.rho_plus[:-1].min() * g.dtheta)),
            float((np.abs(flux.angular) / (g.rho_plus - g.rho_minus)[:, None]).max()),
            float(np.abs(flux.wall).max() / (g.r_inner * g.dtheta)),
        )
        dt = math.inf if speed == 0 else self.cfg.cfl_advective * min(r_len, arc) / speed
        inflow = flux.inflow()
        if inflow.max() > 0:
            positivity = float((g.cell_area[:, None] / np.where(inflow > 0, inflow, np.inf)).min())
            dt = min(dt, (0.5 if self.second_order else 1.0) * positivity)
        return min(dt, self.cfg.dt_max)

    # -- stages --------------------------------------------------------------
    def _diffuse(self, omega: np.ndarray, t0: float, dt: float) -> np.ndarray:
        g = self.grid
        key = (dt, self.nu)
        if key != self._plan_key:
            self._plan = ell.PoissonSolverPlan(g, "dirichlet", shift=1.0, scale=0.5 * self.nu * dt)
            self._plan_key = key
        old = omega.copy()
        b0 = self.bd.b_trace(g, t0)
        old[0], old[-1] = b0[INNER], b0[OUTER]
        rhs = old + 0.5 * self.nu * dt * ell.laplacian(g, old)
        b1 = self.bd.b_trace(g, t0 + dt)
        rhs[0], rhs[-1] = b1[INNER], b1[OUTER]
        return self._plan.solve(rhs)

    def _lam_rest(self, state: FlowState) -> np.ndarray:
        """``A^-1 fbar`` without the time-derivative term."""
        return vel.lambda_rhs(self.grid, self.basis, state, self.nu, self.bd)

    def _time_term(self, before: FlowState, after_omega: np.ndarray, t1: float) -> np.ndarray:
        """``-A^-1 int (X_1 - X_0) . u`` with ``X = u_nu + a`` (the telescoped time term)."""
        h_nu = ell.solve_dirichlet(self.grid, after_omega)
        dX = ell.perp_grad(self.grid, h_nu - before.h_nu) + ell.grad(self.grid, self.h_a(t1) - before.h_a)
        f = np.array([-ell.integrate(self.grid, dX.dot(u)) for u in self.basis.u])
        return self.basis.solve(f)

    def _set_inflow(self, omega: np.ndarray, t: float) -> np.ndarray:
        labels = classify_boundary(self.bd, self.grid, t)
        b = self.bd.b_trace(self.grid, t)
        for k, row in ((INNER, 0), (OUTER, -1)):
            mask = labels[k] == INFLOW
            omega[row, mask] = b[k, mask]
        return omega

    def _inflow_range(self, t: float) -> tuple[float, float] | None:
        labels = classify_boundary(self.bd, self.grid, t)
        b = self.bd.b_trace(self.grid, t)
        vals = b[labels == INFLOW]
        return (float(vals.min()), float(vals.max())) if vals.size else None

    def _widen(self, rng) -> None:
        if rng is not None and self.envelope is not None:
            self.envelope = (min(self.envelope[0], rng[0]), max(self.envelope[1], rng[1]))

    def step(self, state: FlowState, dt: float | None = None, t_stop: float | None = None) -> tuple[FlowState, float]:
        g, t0 = self.grid, state.t
        step_no = self.n_step + 1
        flux0 = self.fluxes(state)
        h = self.stable_dt(flux0)
        if dt is not None:
            h = min(h, dt)
        if t_stop is not None:
            h = min(h, t_stop - t0)
        if not h > self.cfg.dt_min:
            raise SolverAbort(f"time step underflow (dt={h:.3e})", step_no, t0)
        t1 = t0 + h
        b0 = self.bd.b_trace(g, t0)
        b1 = self.bd.b_trace(g, t1)
        inviscid = self.nu == 0.0
        if self.envelope is None:
            self.envelope = (float(state.omega.min()), float(state.omega.max()))
            self._widen(self._inflow_range(t0))

        rest0 = self._lam_rest(state)
        w1 = advect(g, state.omega, flux0, b0, h, self.second_order)
        if self.second_order:
            lam1 = state.lam + h * rest0 + self._time_term(state, w1, t1)
            s1 = self.state(t1, w1, lam1)
            w2 = advect(g, w1, self.fluxes(s1), b1, h, True)
            w_star = 0.5 * (state.omega + w2)
            rest = 0.5 * (rest0 + self._lam_rest(s1))
        else:
            w_star, rest = w1, rest0

        if inviscid:
            omega = self._set_inflow(w_star, t1)
        else:
            omega = self._diffuse(w_star, t0, h)
        if not np.all(np.isfinite(omega)):
            raise SolverAbort("non-finite vorticity", step_no, t1)
        lam = state.lam + h * rest + self._time_term(state, omega, t1)
        if not np.all(np.isfinite(lam)):
            raise SolverAbort("non-finite circulation coefficients", step_no, t1)

        if inviscid and not self.second_order:
            self._widen(self._inflow_range(t1))
            lo, hi = self.envelope
            tol = 1e-12 * max(1.0, abs(lo), abs(hi))
            if omega.min() < lo - tol or omega.max() > hi + tol:
                raise MaximumPrincipleViolation(
                    f"vorticity range [{omega.min():.6g}, {omega.max():.6g}] leaves [{lo:.6g}, {hi:.6g}]",
                    step_no,
                    t1,
                )
        self.n_step = step_no
        return self.state(t1, omega, lam), h


def step(
    grid: Grid, basis: HarmonicBasis, state: FlowState, nu: float, bd: BoundaryData, cfg: TimeIntegratorConfig
) -> FlowState:
    """Single step from ``state``; see :class:`Integrator` for repeated stepping."""
    return Integrator(grid, basis, nu, bd, cfg).step(state, t_stop=cfg.t_end)[0]


class _Series:
    def __init__(self, grid: Grid, nu: float, cfg: TimeIntegratorConfig, basis: HarmonicBasis):
        self.grid, self.nu, self.cfg, self.basis = grid, nu, cfg, basis
        self.rows: list[dict] = []
        self._prev_rates = None

    def _rates(self, state: FlowState) -> tuple[float, float]:
        g = self.grid
        if self.nu == 0:
            return 0.0, 0.0
        grad_w = ell.dirichlet_energy(g, state.omega)
        w = state.v - ell.grad(g, state.h_a)
        strain = ell.integrate(g, ell.strain_product(g, w, w))
        return self.nu * grad_w, self.nu * strain

    def record(self, state: FlowState, dt: float, drift: float) -> None:
        g = self.grid
        rates = self._rates(state)
        row = {"t": state.t, "dt": dt}
        for p in self.cfg.norms:
            row[norm_columns(p)] = ell.lp_norm(g, state.omega, p)
        row["linf"] = float(np.abs(state.omega).max())
        for k, l in enumerate(state.lam, start=1):
            row[f"lambda_{k}"] = float(l)
        row["energy"] = ell.integrate(g, (state.v - ell.grad(g, state.h_a)).magnitude() ** 2)
        prev = self.rows[-1] if self.rows else None
        acc_g = acc_s = 0.0
        if prev is not None:
            acc_g = prev["nu_grad_omega"] + 0.5 * dt * (self._prev_rates[0] + rates[0])
            acc_s = prev["nu_strain"] + 0.5 * dt * (self._prev_rates[1] + rates[1])
        row["nu_grad_omega"] = acc_g
        row["nu_strain"] = acc_s
        row["omega_integral"] = ell.integrate(g, state.omega)
        row["omega_min"] = float(state.omega.min())
        row["omega_max"] = float(state.omega.max())
        row["lambda_drift"] = drift
        self._prev_rates = rates
        self.rows.append(row)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: np.array([r[k] for r in self.rows]) for k in self.rows[0]}


def snapshot_times(t_end: float, count: int) -> np.ndarray:
    if count < 2:
        raise ValueError("need at least two snapshots")
    return np.linspace(0.0, t_end, count)


def run(
    grid: Grid,
    omega0: np.ndarray,
    lam0,
    nu: float,
    bd: BoundaryData,
    cfg: TimeIntegratorConfig,
    schedule=None,
    basis: HarmonicBasis | None = None,
) -> Trajectory:
    """Integrate to ``cfg.t_end``, stepping exactly onto every scheduled snapshot time."""
    basis = basis or HarmonicBasis.build(grid)
    schedule = snapshot_times(cfg.t_end, 21) if schedule is None else np.asarray(schedule, dtype=float)
    if schedule.size == 0 or np.any(np.diff(schedule) <= 0):
        raise ValueError("snapshot schedule must be strictly increasing and non-empty")
    if schedule[0] < 0 or schedule[-1] > cfg.t_end * (1 + 1e-12):
        raise ValueError(f"snapshot schedule outside [0, t_end={cfg.t_end}]")
    omega0 = np.asarray(omega0, dtype=float)
    if omega0.shape != grid.shape:
        raise ValueError(f"initial vorticity has shape {omega0.shape}, grid expects {grid.shape}")
    bd.check_compatibility(grid)

    integ = Integrator(grid, basis, nu, bd, cfg)
    state = integ.state(0.0, omega0.copy(), lam0)
    traj = Trajectory(grid, float(nu), bd, cfg)
    rot_err = np.abs(ell.rot(grid, state.v) - omega0)[1:-1]
    traj.initial_rot_defect = float(rot_err.max()) if rot_err.size else 0.0

    series = _Series(grid, float(nu), cfg, basis)
    series.record(state, 0.0, 0.0)
    targets = list(schedule)
    if targets and targets[0] <= 0.0:
        traj.snapshots.append(state)
        targets.pop(0)
    stops = targets + ([cfg.t_end] if not targets or targets[-1] < cfg.t_end else [])
    for stop in stops:
        while state.t < stop * (1 - 1e-14) - 1e-300:
            state, dt = integ.step(state, t_stop=stop)
            drift = 0.0
            if integ.n_step % cfg.check_every == 0:
                lam_chk = vel.initial_lambda(grid, basis, state.v, state.omega, state.h_a)
                drift = float(np.abs(lam_chk - state.lam).max())
            series.record(state, dt, drift)
        state = FlowState(stop, state.omega, state.lam, state.v, state.h_nu, state.h_a)
        if targets and stop == targets[0]:
            traj.snapshots.append(state)
            targets.pop(0)
    traj.series = series.arrays()
    return traj
