"""Single runs and viscosity sweeps driven by an :class:`ExperimentConfig`."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import diagnostics as diag
from ..evolution import Trajectory, run
from ..velocity import HarmonicBasis
from . import io
from .config import ExperimentConfig, dump_config

log = logging.getLogger(__name__)


def run_member(cfg: ExperimentConfig, nu: float) -> Trajectory:
    grid = cfg.grid.build()
    bd = cfg.boundary_data()
    tcfg = cfg.integrator.build(cfg.diagnostics.p)
    omega0 = cfg.initial.omega(grid)
    basis = HarmonicBasis.build(grid)
    log.info("%s: nu=%g on %dx%d", cfg.name, nu, grid.n_r, grid.n_theta)
    return run(grid, omega0, [cfg.initial.lambda0], nu, bd, tcfg, cfg.integrator.schedule(), basis)


def _member(args):
    return run_member(*args)


def run_sweep_members(cfg: ExperimentConfig, parallel: int = 1) -> list[Trajectory]:
    """All viscosities of ``cfg``, in config order; results do not depend on ``parallel``."""
    jobs = [(cfg, nu) for nu in cfg.nus]
    if parallel <= 1 or len(jobs) == 1:
        return [_member(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(parallel, len(jobs))) as pool:
        return list(pool.map(_member, jobs))


# ---------------------------------------------------------------------------
# outputs


def write_trajectory(out: Path, traj: Trajectory) -> None:
    io.write_series(out / "series.csv", traj.series)
    for k, s in enumerate(traj.snapshots):
        io.write_fld(out / "snapshots" / f"omega_{k:04d}.fld", s.omega, s.t, "omega")
        io.write_fld(out / "snapshots" / f"vr_{k:04d}.fld", s.v.r, s.t, "v_r")
        io.write_fld(out / "snapshots" / f"vt_{k:04d}.fld", s.v.t, s.t, "v_theta")


def _weak_rows(traj: Trajectory, psis) -> list[dict]:
    rows = []
    for psi in psis:
        w = diag.weak_euler_residual(traj, traj.bd, psi)
        rows.append({"psi": w.name, "value": w.value, "transport": w.transport, "initial": w.initial,
                     "inflow": w.inflow})
    return rows


def write_weak(out: Path, rows: list[dict]) -> None:
    io.write_csv(out / "weak_residual.csv", ["psi", "value", "transport", "initial", "inflow"],
                 [[r["psi"], r["value"], r["transport"], r["initial"], r["inflow"]] for r in rows])


def write_flux(out: Path, table: list[dict]) -> None:
    io.write_csv(out / "flux_table.csv", ["sigma", "nu", "value"], [[r["sigma"], r["nu"], r["value"]] for r in table])


@dataclass
class RunResult:
    traj: Trajectory
    report: dict = field(default_factory=dict)
    fatal: list[str] = field(default_factory=list)


def run_single(cfg: ExperimentConfig, out: Path, nu: float | None = None) -> RunResult:
    nu = cfg.nus[-1] if nu is None else float(nu)
    traj = run_member(cfg, nu)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(dump_config(cfg))
    write_trajectory(out, traj)
    s = traj.series
    report = {
        "experiment": cfg.name,
        "nu": nu,
        "steps": traj.steps,
        "l2_drift": float(np.abs(s["l2"] - s["l2"][0]).max()),
        "omega_integral_drift": float(np.abs(np.diff(s["omega_integral"])).max(initial=0.0)),
        "lambda_drift": float(s["lambda_drift"].max()),
        "initial_rot_defect": traj.initial_rot_defect,
        "final": {k: float(v[-1]) for k, v in s.items()},
    }
    en = diag.energy_check(traj, p=cfg.diagnostics.energy_p)
    report["energy"] = {"C": en.C, "min_margin": float(en.margin.min()), "holds": en.holds}
    res = RunResult(traj, report)
    weak = []
    if nu == 0.0:
        weak = _weak_rows(traj, cfg.diagnostics.test_functions(cfg.integrator.t_end))
        report["weak_residual"] = {r["psi"]: r["value"] for r in weak}
        thr = cfg.diagnostics.weak_threshold
        if thr is not None and any(r["value"] > thr for r in weak):
            res.fatal.append(f"weak residual above threshold {thr}")
    else:
        slip = diag.slip_identity_check(traj.grid, traj.snapshots[-1], traj.bd)
        report["slip_defect"] = {"max": slip.max, "l2": slip.l2}
    write_weak(out, weak)
    flux = [{"sigma": sg, "nu": nu, "value": diag.boundary_layer_flux(traj, sg, cfg.diagnostics.flux_test_function(cfg.integrator.t_end))}
            for sg in cfg.diagnostics.sigmas]
    write_flux(out, flux)
    report["fatal"] = res.fatal
    io.write_json(out / "report.json", report)
    return res


@dataclass
class SweepResult:
    runs: list[Trajectory]
    report: diag.SweepReport
    failed: list[str]


def sweep(cfg: ExperimentConfig, out: Path | None = None, parallel: int = 1) -> SweepResult:
    if len(cfg.nus) < 3 or 0.0 not in cfg.nus:
        from .config import ConfigError

        raise ConfigError("nu", "a sweep needs at least three viscosities including 0")
    runs = run_sweep_members(cfg, parallel)
    t_end = cfg.integrator.t_end
    rep = diag.sweep_compare(
        runs,
        psis=cfg.diagnostics.test_functions(t_end),
        sigmas=cfg.diagnostics.sigmas,
        flux_psi=cfg.diagnostics.flux_test_function(t_end),
        energy_p=cfg.diagnostics.energy_p,
        require_motion=False,
    )
    rep.verdicts["interior_moving"] = any(d > 0 for d in rep.interior_diff[:-1])
    if cfg.diagnostics.sigma0 > 0:
        diag_vals = [v for _, _, v in diag.flux_diagonal(rep.flux_table, cfg.diagnostics.sigma0, (1, 2, 3))]
        rep.verdicts["flux_diagonal"] = all(b < a for a, b in zip(diag_vals, diag_vals[1:])) and diag_vals[-1] <= 0.1 * diag_vals[0]
    thr = cfg.diagnostics.weak_threshold
    if thr is not None:
        rep.verdicts["weak_threshold"] = all(w["residual"] <= thr for w in rep.weak_residuals.values())
    failed = [k for k, v in rep.verdicts.items() if not v and k != "interior_moving"]
    if out is not None:
        write_sweep(Path(out), cfg, runs, rep)
    return SweepResult(runs, rep, failed)


def write_sweep(out: Path, cfg: ExperimentConfig, runs: list[Trajectory], rep: diag.SweepReport) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(dump_config(cfg))
    for tr in runs:
        write_trajectory(out / f"nu_{tr.nu:g}", tr)
    ps = list(rep.ceilings)
    rows = []
    for i, nu in enumerate(rep.nus):
        rows.append([nu, rep.interior_diff[i], rep.near_wall_diff[i], rep.grad_totals[i], rep.energy_margin[i]]
                    + [rep.ceilings[p][i] for p in ps])
    io.write_csv(out / "convergence.csv",
                 ["nu", "interior_sup_diff", "near_wall_sup_diff", "nu_grad_omega", "energy_margin"]
                 + [f"max_{p}" for p in ps], rows)
    write_flux(out, rep.flux_table)
    write_weak(out, [{"psi": k, "value": v["residual"], **{x: v[x] for x in ("transport", "initial", "inflow")}}
                     for k, v in rep.weak_residuals.items()])
    io.write_json(out / "report.json", {"experiment": cfg.name, **rep.to_dict()})
