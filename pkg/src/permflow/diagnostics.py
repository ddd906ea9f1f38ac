"""Energy bounds, weak residuals, boundary-layer fluxes and sweep comparisons from trajectories.

Quadratures: grid control volumes in space, composite trapezoid in time
(over the per-step series or the snapshots), and the periodic rectangle rule
on the boundary circles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import elliptic as ell
from .evolution import Trajectory, norm_columns
from .geometry import INFLOW, INNER, OUTER, BoundaryData, DistanceField, Grid, VectorField, classify_boundary
from .velocity import FlowState, slip_datum


class SupportError(ValueError):
    """Test function violates the support condition."""


class BandTooThin(ValueError):
    pass


def norms(grid: Grid, f: np.ndarray, ps=(2, 4, 8)) -> dict[str, float]:
    out = {norm_columns(p): ell.lp_norm(grid, f, p) for p in ps}
    out["linf"] = float(np.abs(f).max())
    return out


def _trapezoid(y: np.ndarray, t: np.ndarray) -> float:
    y, t = np.asarray(y, float), np.asarray(t, float)
    if y.size < 2:
        return 0.0
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(t)))


def _cumtrapz(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(np.asarray(t, float))
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))
    return out


# ---------------------------------------------------------------------------
# test functions


def _cos2_window(x: np.ndarray, center: float, width: float):
    """``cos^2(pi (x - c) / (2 w))`` on ``|x - c| < w``: value and derivative, C^{1,1}."""
    s = (x - center) / width
    inside = np.abs(s) < 1.0
    arg = 0.5 * np.pi * s
    val = np.where(inside, np.cos(arg) ** 2, 0.0)
    der = np.where(inside, -np.pi / (2.0 * width) * np.sin(2.0 * arg), 0.0)
    return val, der


def _angle_offset(theta: np.ndarray, center: float) -> np.ndarray:
    return (theta - center + np.pi) % (2.0 * np.pi) - np.pi


@dataclass(frozen=True)
class TestFunction:
    """``psi = amp * R(r) * Theta(theta) * tau(t)``.

    ``R`` is a cos^2 bump of half-width ``r_width`` about ``r_center``;
    ``Theta`` is a cos^2 window about ``theta_center`` (or 1 when
    ``theta_width`` is None); ``tau(t) = cos^2(pi t / (2 t_end))`` vanishes with
    zero slope at ``t_end``.
    """

    __test__ = False  # not a pytest class

    name: str
    r_center: float
    r_width: float
    t_end: float
    theta_center: float = 0.0
    theta_width: float | None = None
    amp: float = 1.0

    def __post_init__(self):
        if not self.r_width > 0 or not self.t_end > 0:
            raise ValueError("test function widths and t_end must be positive")
        if self.theta_width is not None and not 0 < self.theta_width <= np.pi:
            raise ValueError("theta_width must lie in (0, pi]")

    def _parts(self, grid: Grid, t: float):
        r, th = grid.mesh()
        R, dR = _cos2_window(r, self.r_center, self.r_width)
        if self.theta_width is None:
            A, dA = np.ones_like(th), np.zeros_like(th)
        else:
            A, dA = _cos2_window(_angle_offset(th, self.theta_center), 0.0, self.theta_width)
        s = 0.5 * np.pi * min(max(t / self.t_end, 0.0), 1.0)
        tau = math.cos(s) ** 2
        dtau = -math.pi / (2.0 * self.t_end) * math.sin(2.0 * s) if 0 <= t <= self.t_end else 0.0
        return r, R, dR, A, dA, tau, dtau

    def value(self, grid: Grid, t: float) -> np.ndarray:
        _, R, _, A, _, tau, _ = self._parts(grid, t)
        return self.amp * R * A * tau

    def dt(self, grid: Grid, t: float) -> np.ndarray:
        _, R, _, A, _, _, dtau = self._parts(grid, t)
        return self.amp * R * A * dtau

    def grad(self, grid: Grid, t: float) -> VectorField:
        r, R, dR, A, dA, tau, _ = self._parts(grid, t)
        return VectorField(self.amp * dR * A * tau, self.amp * R * dA * tau / r)

    def scaled(self, c: float, name: str | None = None) -> "TestFunction":
        return TestFunction(name or f"{c}*{self.name}", self.r_center, self.r_width, self.t_end,
                            self.theta_center, self.theta_width, self.amp * c)


@dataclass(frozen=True)
class TestCombination:
    """Linear combination of test functions (used for linearity checks)."""

    __test__ = False

    name: str
    terms: tuple[tuple[float, TestFunction], ...]

    @property
    def t_end(self) -> float:
        return self.terms[0][1].t_end

    def value(self, grid, t):
        return sum(c * p.value(grid, t) for c, p in self.terms)

    def dt(self, grid, t):
        return sum(c * p.dt(grid, t) for c, p in self.terms)

    def grad(self, grid, t):
        out = VectorField.zeros(grid)
        for c, p in self.terms:
            out = out + p.grad(grid, t) * c
        return out


def test_function_from_dict(d: dict, t_end: float) -> TestFunction:
    return TestFunction(
        name=str(d["name"]),
        r_center=float(d["r_center"]),
        r_width=float(d["r_width"]),
        t_end=float(d.get("t_end", t_end)),
        theta_center=float(d.get("theta_center", 0.0)),
        theta_width=None if d.get("theta_width") is None else float(d["theta_width"]),
        amp=float(d.get("amp", 1.0)),
    )


def check_support(psi, grid: Grid, bd: BoundaryData, times, tol: float = 1e-14) -> None:
    """Reject ``psi`` unless it vanishes at the final time and on the non-inflow boundary nodes."""
    times = np.asarray(times, dtype=float)
    scale = max(1.0, float(np.abs(psi.value(grid, times[0])).max()))
    end = float(np.abs(psi.value(grid, psi.t_end)).max())
    if end > tol * scale:
        raise SupportError(f"{getattr(psi, 'name', 'psi')}: psi(., T) = {end:.3e}, must vanish")
    for t in times:
        val = psi.value(grid, t)
        trace = np.stack([val[0], val[-1]])
        bad = (classify_boundary(bd, grid, t) != INFLOW) & (np.abs(trace) > tol * scale)
        if bad.any():
            k, j = np.argwhere(bad)[0]
            circle = "inner" if k == INNER else "outer"
            raise SupportError(
                f"{getattr(psi, 'name', 'psi')}: nonzero ({trace[k, j]:.3e}) on the {circle} circle at "
                f"theta={grid.theta[j]:.3f}, t={t:.3f}, outside the inflow set"
            )


# ---------------------------------------------------------------------------
# weak formulation


@dataclass(frozen=True)
class WeakResidual:
    name: str
    transport: float  # int int omega (psi_t + v . grad psi)
    initial: float  # int omega_0 psi(0)
    inflow: float  # int int_{inflow} a b psi

    @property
    def signed(self) -> float:
        return self.transport + self.initial - self.inflow

    @property
    def value(self) -> float:
        return abs(self.signed)


def weak_euler_residual(traj: Trajectory, bd: BoundaryData, psi, check: bool = True) -> WeakResidual:
    grid = traj.grid
    snaps = traj.snapshots
    if len(snaps) < 2:
        raise ValueError("weak residual needs at least two snapshots")
    times = np.array([s.t for s in snaps])
    if check:
        check_support(psi, grid, bd, times)
    dens, bnd = [], []
    ds = grid.dtheta * grid.radii[:, None]
    for s in snaps:
        v = s.v
        dens.append(ell.integrate(grid, s.omega * (psi.dt(grid, s.t) + v.dot(psi.grad(grid, s.t)))))
        mask = classify_boundary(bd, grid, s.t) == INFLOW
        val = psi.value(grid, s.t)
        trace = np.stack([val[0], val[-1]])
        integrand = bd.a_trace(grid, s.t) * bd.b_trace(grid, s.t) * trace * mask
        bnd.append(float(np.sum(ds * integrand)))
    initial = ell.integrate(grid, snaps[0].omega * psi.value(grid, snaps[0].t))
    return WeakResidual(getattr(psi, "name", "psi"), _trapezoid(dens, times), initial, _trapezoid(bnd, times))


# ---------------------------------------------------------------------------
# energy inequality


def data_weight(grid: Grid, bd: BoundaryData, t: float) -> float:
    """``f(t) = 1 + ||a||^2 + ||da/dt||^2 + ||b||^2`` with boundary L2 norms.

    The weight collects the boundary data entering the energy estimate; it
    depends on the data only, never on the solution.
    """
    sq = lambda tr: float(ell.boundary_integral(grid, tr**2).sum())  # noqa: E731
    at = bd.a.trace_dt(grid.theta, t)
    return 1.0 + sq(bd.a_trace(grid, t)) + sq(at) + sq(bd.b_trace(grid, t))


@dataclass
class EnergyReport:
    t: np.ndarray
    lhs: np.ndarray
    integral: np.ndarray
    C: float
    p: float

    @property
    def rhs(self) -> np.ndarray:
        return self.C * (self.integral + 1.0)

    @property
    def margin(self) -> np.ndarray:
        return self.rhs - self.lhs

    @property
    def holds(self) -> bool:
        return bool(np.all(self.margin >= -1e-12 * np.maximum(1.0, self.rhs)))

    @property
    def ratio(self) -> float:
        """Smallest ``C`` for which the inequality holds on this trajectory."""
        return float(np.max(self.lhs / (self.integral + 1.0)))


def energy_terms(traj: Trajectory, p: float = 2.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    s = traj.series
    if not s or len(s["t"]) < 20:
        raise ValueError("energy check needs a trajectory with at least 20 samples")
    t = s["t"]
    col = norm_columns(p)
    if col not in s:
        raise ValueError(f"series has no {col} column; configure p={p} in the run norms")
    f = np.array([data_weight(traj.grid, traj.bd, ti) for ti in t])
    integral = _cumtrapz(f * s[col] ** 2, t)
    lhs = s["energy"] + s["nu_strain"]
    return t, lhs, integral


def energy_check(traj: Trajectory, C: float | None = None, p: float = 2.0) -> EnergyReport:
    """Left side ``||v - a||^2 + nu int ||D(v - a)||^2`` against ``C (int f ||omega||_p^2 + 1)``.

    ``C=None`` calibrates on this trajectory (see :func:`calibrate_energy_constant`).
    """
    t, lhs, integral = energy_terms(traj, p)
    rep = EnergyReport(t, lhs, integral, 0.0, p)
    rep.C = calibrate_energy_constant([traj], p) if C is None else float(C)
    return rep


def calibrate_energy_constant(trajs, p: float = 2.0, safety: float = 2.0, floor: float = 1.0) -> float:
    ratios = [EnergyReport(*energy_terms(tr, p), 0.0, p).ratio for tr in trajs]
    return max(floor, safety * max(ratios))


# ---------------------------------------------------------------------------
# boundary layer flux


def band_weights(grid: Grid, sigma: float) -> np.ndarray:
    """Row weights: area of each control volume inside ``sigma < d < 2 sigma``, per unit angle times dtheta."""
    rm, rp = grid.rho_minus, grid.rho_plus
    w = np.zeros_like(grid.r)
    for lo, hi in ((grid.r_inner + sigma, grid.r_inner + 2 * sigma), (grid.r_outer - 2 * sigma, grid.r_outer - sigma)):
        a = np.clip(rm, lo, hi)
        b = np.clip(rp, lo, hi)
        w += 0.5 * (b**2 - a**2)
    return w * grid.dtheta


def check_band(grid: Grid, sigma: float) -> None:
    sigma0 = 0.25 * grid.width
    if not 0 < sigma < sigma0:
        raise BandTooThin(f"sigma={sigma} must lie in (0, {sigma0}) (a quarter of the annulus width)")
    d = np.minimum(grid.r - grid.r_inner, grid.r_outer - grid.r)
    inside = (d > sigma) & (d < 2 * sigma)
    near_inner = int(np.sum(inside & (grid.r < 0.5 * (grid.r_inner + grid.r_outer))))
    near_outer = int(np.sum(inside)) - near_inner
    if min(near_inner, near_outer) < 2:
        raise BandTooThin(
            f"band sigma<d<2sigma with sigma={sigma:.4g} holds {min(near_inner, near_outer)} radial node layer(s); "
            f"increase n_r (now {grid.n_r}) or sigma"
        )


def boundary_layer_flux(traj: Trajectory, sigma: float, psi=None, B=None) -> float:
    """``(1/sigma) int_0^T int_{sigma<d<2sigma} |omega - B| (v . grad d) psi``.

    ``B`` defaults to the harmonic lift of ``b``; it may also be a fixed field
    or a callable ``B(t)``.  ``psi=None`` means ``psi = 1``.
    """
    grid = traj.grid
    check_band(grid, sigma)
    w = band_weights(grid, sigma)[:, None]
    dist = DistanceField.build(grid)
    cache = {}

    def lift(t):
        if B is not None:
            return B(t) if callable(B) else np.asarray(B)
        key = 0.0 if traj.bd.b.ramp.constant else t
        if key not in cache:
            cache[key] = ell.harmonic_lift(grid, traj.bd.b_trace(grid, t))
        return cache[key]

    vals, times = [], []
    for s in traj.snapshots:
        weight = w if psi is None else w * psi.value(grid, s.t)
        vn = s.v.dot(dist.grad_d)
        vals.append(float(np.sum(weight * np.abs(s.omega - lift(s.t)) * vn)))
        times.append(s.t)
    return _trapezoid(vals, times) / sigma


# ---------------------------------------------------------------------------
# slip identity


@dataclass(frozen=True)
class SlipReport:
    defect: np.ndarray  # (2, n_theta)

    @property
    def max(self) -> float:
        return float(self.defect.max())

    @property
    def l2(self) -> float:
        return float(np.sqrt(np.mean(self.defect**2)))


_TAU_ORIENT = np.array([-1.0, 1.0])  # tau = (-n_2, n_1) = orient * e_theta


def slip_defect(grid: Grid, e_rt: np.ndarray, v_theta: np.ndarray, g: np.ndarray) -> SlipReport:
    """``|2 D(v)n.tau + 2 k v.tau - g|`` from boundary traces of ``D_{r theta}`` and ``v_theta``.

    With ``n = -e_r, tau = -e_theta`` (inner) and ``n = e_r, tau = e_theta``
    (outer), ``D(v)n.tau = D_{r theta}`` on both circles.
    """
    k = grid.curvature[:, None]
    lhs = 2.0 * e_rt + 2.0 * k * _TAU_ORIENT[:, None] * v_theta
    return SlipReport(np.abs(lhs - g))


def slip_identity_check(grid: Grid, state: FlowState | VectorField, bd: BoundaryData, t: float | None = None) -> SlipReport:
    """Slip defect with the strain extracted by one-sided differences on the grid."""
    v = state.v if isinstance(state, FlowState) else state
    t = state.t if isinstance(state, FlowState) else (t or 0.0)
    e_rt = ell.strain(grid, v)[2]
    return slip_defect(grid, np.stack([e_rt[0], e_rt[-1]]), np.stack([v.t[0], v.t[-1]]), slip_datum(grid, bd, t))


# ---------------------------------------------------------------------------
# sweeps


def interior_mask(grid: Grid, fraction: float = 0.25) -> np.ndarray:
    d = np.minimum(grid.r - grid.r_inner, grid.r_outer - grid.r)
    return d > fraction * grid.width


def velocity_difference(a: FlowState, b: FlowState, rows: np.ndarray | None = None) -> float:
    d = (a.v - b.v).magnitude()
    if rows is not None:
        d = d[rows]
    return float(d.max()) if d.size else 0.0


@dataclass
class SweepReport:
    nus: list[float]
    ceilings: dict[str, list[float]] = field(default_factory=dict)
    grad_totals: list[float] = field(default_factory=list)
    interior_diff: list[float] = field(default_factory=list)
    near_wall_diff: list[float] = field(default_factory=list)
    energy_C: float = 0.0
    energy_margin: list[float] = field(default_factory=list)
    flux_table: list[dict] = field(default_factory=list)
    weak_residuals: dict[str, dict] = field(default_factory=dict)
    verdicts: dict[str, bool] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "nus": self.nus,
            "ceilings": self.ceilings,
            "grad_totals": self.grad_totals,
            "interior_diff": self.interior_diff,
            "near_wall_diff": self.near_wall_diff,
            "energy_C": self.energy_C,
            "energy_margin": self.energy_margin,
            "flux_table": self.flux_table,
            "weak_residuals": self.weak_residuals,
            "verdicts": self.verdicts,
        }


def _strictly_decreasing(x, rel: float = 0.0) -> bool:
    x = list(x)
    return all(b < a * (1 + rel) for a, b in zip(x, x[1:]))


def sweep_compare(
    runs: list[Trajectory],
    psis=(),
    sigmas=(),
    flux_psi=None,
    energy_p: float = 2.0,
    ceiling_ratio: float = 2.0,
    grad_factor: float = 2.0,
    require_motion: bool = True,
) -> SweepReport:
    """Cross-viscosity metrics against the ``nu = 0`` member (last in the list)."""
    if len(runs) < 3:
        raise ValueError("sweep comparison needs at least three viscosities")
    nus = [tr.nu for tr in runs]
    if not _strictly_decreasing(nus):
        raise ValueError(f"viscosities must be strictly decreasing, got {nus}")
    base = runs[-1]
    times = base.times
    for tr in runs:
        if tr.grid != base.grid or tr.times.shape != times.shape or not np.allclose(tr.times, times, rtol=0, atol=1e-12):
            raise ValueError("sweep members do not share grid and snapshot schedule")
    grid = base.grid
    rep = SweepReport(nus)
    ps = [p for p in base.cfg.norms]
    for p in ps:
        key = norm_columns(p)
        rep.ceilings[key] = [float(tr.series[key].max()) for tr in runs]
    rep.grad_totals = [float(tr.series["nu_grad_omega"][-1]) for tr in runs]
    interior = interior_mask(grid)
    near = ~interior
    for tr in runs:
        rep.interior_diff.append(max(velocity_difference(a, b, interior) for a, b in zip(tr.snapshots, base.snapshots)))
        rep.near_wall_diff.append(max(velocity_difference(a, b, near) for a, b in zip(tr.snapshots, base.snapshots)))

    rep.energy_C = calibrate_energy_constant(runs[:1], energy_p)
    reports = [energy_check(tr, rep.energy_C, energy_p) for tr in runs]
    rep.energy_margin = [float(r.margin.min()) for r in reports]

    for sigma in sigmas:
        for tr in runs:
            rep.flux_table.append({"sigma": float(sigma), "nu": tr.nu, "value": boundary_layer_flux(tr, sigma, flux_psi)})
    for psi in psis:
        w = weak_euler_residual(base, base.bd, psi)
        rep.weak_residuals[w.name] = {"residual": w.value, "transport": w.transport, "initial": w.initial, "inflow": w.inflow}

    ratios = []
    for vals in rep.ceilings.values():
        lo, hi = min(vals), max(vals)
        ratios.append(1.0 if hi == 0 else (math.inf if lo == 0 else hi / lo))
    rep.verdicts["lp_ceiling_ratio"] = all(r <= ceiling_ratio for r in ratios)
    rep.verdicts["grad_bounded"] = all(g <= grad_factor * rep.grad_totals[0] + 1e-300 for g in rep.grad_totals)
    rep.verdicts["energy"] = all(r.holds for r in reports)
    moving = any(d > 0 for d in rep.interior_diff[:-1])
    rep.verdicts["interior_decreasing"] = _strictly_decreasing(rep.interior_diff[:-1]) if moving else not require_motion
    return rep


def flux_diagonal(table: list[dict], sigma0: float, j_values=(0, 1, 2, 3)) -> list[tuple[float, float, float]]:
    """Entries ``(sigma_j, nu_j, value)`` with ``sigma_j = 2^-j sigma0`` and ``nu_j = 10^-(j+1)``."""
    out = []
    for j in j_values:
        s, n = sigma0 / 2**j, 10.0 ** -(j + 1)
        hit = [row for row in table if math.isclose(row["sigma"], s, rel_tol=1e-9) and math.isclose(row["nu"], n, rel_tol=1e-9)]
        if not hit:
            raise KeyError(f"flux table lacks (sigma={s}, nu={n})")
        out.append((s, n, hit[0]["value"]))
    return out


def velocity_rate_norms(traj: Trajectory) -> np.ndarray:
    """``||dv/dt||_{L2}`` between consecutive snapshots (reported, not asserted)."""
    g = traj.grid
    out = []
    for a, b in zip(traj.snapshots, traj.snapshots[1:]):
        dv = (b.v - a.v) * (1.0 / (b.t - a.t))
        out.append(math.sqrt(ell.integrate(g, dv.magnitude() ** 2)))
    return np.array(out)
