"""Experiment configuration: YAML schema, validation and catalogs.

A config names catalog entries and numeric parameters only; nothing is
evaluated.  ``to_dict`` / ``from_dict`` round-trip exactly, so a written
``config.yaml`` reproduces the run bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ..diagnostics import TestFunction
from ..evolution import SCHEMES, TimeIntegratorConfig, snapshot_times
from ..geometry import BoundaryData, Grid, Profile, Ramp, Term, build_grid, source_profile


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


def _take(d: dict, key: str, path: str, allowed: set[str]) -> None:
    if not isinstance(d, dict):
        raise ConfigError(path, f"expected a mapping, got {type(d).__name__}")
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"{path}.{sorted(extra)[0]}" if path else sorted(extra)[0], "unknown key")


def _num(d: dict, key: str, path: str, default=None, kind=float):
    if key not in d:
        if default is None:
            raise ConfigError(f"{path}.{key}", "missing required value")
        return default
    val = d[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{path}.{key}", f"expected a number, got {val!r}")
    if kind is int:
        if float(val) != int(val):
            raise ConfigError(f"{path}.{key}", f"expected an integer, got {val!r}")
        return int(val)
    return float(val)


# ---------------------------------------------------------------------------
# sections


@dataclass(frozen=True)
class GridConfig:
    r_inner: float = 1.0
    r_outer: float = 2.0
    n_r: int = 64
    n_theta: int = 128
    beta: float = 0.0

    def build(self) -> Grid:
        return build_grid(self.r_inner, self.r_outer, self.n_r, self.n_theta, self.beta)

    @classmethod
    def from_dict(cls, d: dict, path: str = "grid") -> "GridConfig":
        _take(d, "", path, {"r_inner", "r_outer", "n_r", "n_theta", "beta"})
        return cls(
            _num(d, "r_inner", path, 1.0),
            _num(d, "r_outer", path, 2.0),
            _num(d, "n_r", path, 64, int),
            _num(d, "n_theta", path, 128, int),
            _num(d, "beta", path, 0.0),
        )


@dataclass(frozen=True)
class ProfileConfig:
    """Boundary profile: ``kind`` none | source | terms, plus an optional ramp."""

    kind: str = "none"
    q: float = 0.0
    inner: tuple[tuple[str, float, int], ...] = ()
    outer: tuple[tuple[str, float, int], ...] = ()
    ramp: str = "none"
    t_ramp: float = 0.0

    def build(self, grid: GridConfig) -> Profile:
        ramp = Ramp(self.ramp, self.t_ramp) if self.ramp != "none" else Ramp()
        if self.kind == "none":
            return Profile(ramp=ramp)
        if self.kind == "source":
            return source_profile(self.q, grid.r_inner, grid.r_outer, ramp)
        mk = lambda terms: tuple(Term(k, a, m) for k, a, m in terms)  # noqa: E731
        return Profile(mk(self.inner), mk(self.outer), ramp)

    @classmethod
    def from_dict(cls, d, path: str) -> "ProfileConfig":
        if d is None:
            return cls()
        _take(d, "", path, {"kind", "q", "inner", "outer", "ramp", "t_ramp"})
        kind = d.get("kind", "none")
        if kind not in ("none", "source", "terms", "const"):
            raise ConfigError(f"{path}.kind", f"unknown profile {kind!r} (none, source, terms, const)")
        ramp = d.get("ramp", "none")
        if ramp not in ("none", "smooth"):
            raise ConfigError(f"{path}.ramp", f"unknown ramp {ramp!r} (none, smooth)")
        t_ramp = _num(d, "t_ramp", path, 0.0)
        if ramp == "smooth" and not t_ramp > 0:
            raise ConfigError(f"{path}.t_ramp", "smooth ramp needs t_ramp > 0")
        if kind == "const":
            # shorthand: inner/outer are plain numbers
            terms = []
            for side in ("inner", "outer"):
                v = d.get(side, 0.0)
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise ConfigError(f"{path}.{side}", f"expected a number, got {v!r}")
                terms.append(((("const", float(v), 0),) if v else ()))
            return cls("terms", 0.0, terms[0], terms[1], ramp, t_ramp)
        return cls(
            kind,
            _num(d, "q", path, 0.0),
            _terms(d.get("inner", []), f"{path}.inner"),
            _terms(d.get("outer", []), f"{path}.outer"),
            ramp,
            t_ramp,
        )

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "source":
            out["q"] = self.q
        if self.kind == "terms":
            out["inner"] = [{"kind": k, "amp": a, "mode": m} for k, a, m in self.inner]
            out["outer"] = [{"kind": k, "amp": a, "mode": m} for k, a, m in self.outer]
        if self.ramp != "none":
            out["ramp"] = self.ramp
            out["t_ramp"] = self.t_ramp
        return out


def _terms(items, path: str) -> tuple[tuple[str, float, int], ...]:
    if not isinstance(items, list):
        raise ConfigError(path, "expected a list of terms")
    out = []
    for i, t in enumerate(items):
        p = f"{path}[{i}]"
        _take(t, "", p, {"kind", "amp", "mode"})
        kind = t.get("kind")
        if kind not in ("const", "cos", "sin"):
            raise ConfigError(f"{p}.kind", f"unknown term {kind!r} (const, cos, sin)")
        mode = _num(t, "mode", p, 0 if kind == "const" else 1, int)
        if kind != "const" and mode < 1:
            raise ConfigError(f"{p}.mode", "cos/sin terms need mode >= 1")
        out.append((kind, _num(t, "amp", p), mode))
    return tuple(out)


INITIAL_KINDS = ("zero", "radial-cos", "bump")


@dataclass(frozen=True)
class InitialConfig:
    """Initial vorticity from the catalog and the initial circulation coefficient.

    * ``zero``
    * ``radial-cos``: ``amp * cos(pi * k * (r - r_inner) / width)``
    * ``bump``: ``amp * cos^2(pi d / (2 w))`` for Euclidean distance ``d < w``
      from the point ``(r_center, theta_center)``
    """

    kind: str = "zero"
    amp: float = 0.0
    k: float = 1.0
    r_center: float = 0.0
    theta_center: float = 0.0
    width: float = 1.0
    lambda0: float = 0.0

    def omega(self, grid: Grid) -> np.ndarray:
        r, th = grid.mesh()
        if self.kind == "zero":
            return grid.zeros()
        if self.kind == "radial-cos":
            return self.amp * np.cos(np.pi * self.k * (r - grid.r_inner) / grid.width)
        x, y = r * np.cos(th), r * np.sin(th)
        cx, cy = self.r_center * math.cos(self.theta_center), self.r_center * math.sin(self.theta_center)
        d = np.hypot(x - cx, y - cy) / self.width
        return np.where(d < 1.0, self.amp * np.cos(0.5 * np.pi * d) ** 2, 0.0)

    @classmethod
    def from_dict(cls, d, path: str = "initial") -> "InitialConfig":
        d = d or {}
        _take(d, "", path, {"kind", "amp", "k", "r_center", "theta_center", "width", "lambda0"})
        kind = d.get("kind", "zero")
        if kind not in INITIAL_KINDS:
            raise ConfigError(f"{path}.kind", f"unknown initial condition {kind!r} {INITIAL_KINDS}")
        width = _num(d, "width", path, 1.0)
        if not width > 0:
            raise ConfigError(f"{path}.width", "must be positive")
        return cls(
            kind,
            _num(d, "amp", path, 0.0),
            _num(d, "k", path, 1.0),
            _num(d, "r_center", path, 0.0),
            _num(d, "theta_center", path, 0.0),
            width,
            _num(d, "lambda0", path, 0.0),
        )


@dataclass(frozen=True)
class IntegratorConfig:
    t_end: float = 1.0
    cfl: float = 0.4
    dt_max: float = math.inf
    scheme: str = "upwind1"
    check_every: int = 10
    snapshots: int = 41

    def build(self, norms) -> TimeIntegratorConfig:
        return TimeIntegratorConfig(
            t_end=self.t_end,
            cfl_advective=self.cfl,
            dt_max=self.dt_max,
            scheme=self.scheme,
            check_every=self.check_every,
            norms=tuple(float(p) for p in norms),
        )

    def schedule(self) -> np.ndarray:
        return snapshot_times(self.t_end, self.snapshots)

    @classmethod
    def from_dict(cls, d, path: str = "integrator") -> "IntegratorConfig":
        d = d or {}
        _take(d, "", path, {"t_end", "cfl", "dt_max", "scheme", "check_every", "snapshots"})
        out = cls(
            _num(d, "t_end", path, 1.0),
            _num(d, "cfl", path, 0.4),
            _num(d, "dt_max", path, math.inf),
            d.get("scheme", "upwind1"),
            _num(d, "check_every", path, 10, int),
            _num(d, "snapshots", path, 41, int),
        )
        if out.scheme not in SCHEMES:
            raise ConfigError(f"{path}.scheme", f"unknown scheme {out.scheme!r} {SCHEMES}")
        if not (out.t_end > 0 and math.isfinite(out.t_end)):
            raise ConfigError(f"{path}.t_end", "must be positive and finite")
        if not 0 < out.cfl <= 1:
            raise ConfigError(f"{path}.cfl", "must lie in (0, 1]")
        if not out.dt_max > 0:
            raise ConfigError(f"{path}.dt_max", "must be positive")
        if out.snapshots < 20:
            raise ConfigError(f"{path}.snapshots", "need at least 20 snapshots for the time quadratures")
        if out.check_every < 1:
            raise ConfigError(f"{path}.check_every", "must be >= 1")
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        if math.isinf(self.dt_max):
            del d["dt_max"]
        return d


@dataclass(frozen=True)
class DiagnosticsConfig:
    p: tuple[float, ...] = (2.0, 4.0, 8.0)
    energy_p: float = 2.0
    sigma0: float = 0.0
    sigmas: tuple[float, ...] = ()
    psis: tuple[dict, ...] = ()
    flux_psi: dict | None = None
    weak_threshold: float | None = None

    def test_functions(self, t_end: float) -> list[TestFunction]:
        return [_psi(d, t_end) for d in self.psis]

    def flux_test_function(self, t_end: float) -> TestFunction | None:
        return None if self.flux_psi is None else _psi(self.flux_psi, t_end)

    @classmethod
    def from_dict(cls, d, path: str = "diagnostics") -> "DiagnosticsConfig":
        d = d or {}
        _take(d, "", path, {"p", "energy_p", "sigma0", "sigmas", "psis", "flux_psi", "weak_threshold"})
        ps = tuple(float(x) for x in d.get("p", [2, 4, 8]))
        if any(not p >= 1 for p in ps):
            raise ConfigError(f"{path}.p", "norm exponents must be >= 1")
        energy_p = _num(d, "energy_p", path, 2.0)
        if energy_p not in ps:
            raise ConfigError(f"{path}.energy_p", "must be one of the configured p values")
        psis = tuple(d.get("psis", []))
        for i, item in enumerate(psis):
            _check_psi(item, f"{path}.psis[{i}]")
        flux_psi = d.get("flux_psi")
        if flux_psi is not None:
            _check_psi(flux_psi, f"{path}.flux_psi")
        sigma0 = _num(d, "sigma0", path, 0.0)
        sigmas = d.get("sigmas")
        if sigmas is None:
            sigmas = [sigma0 / 2**j for j in range(4)] if sigma0 > 0 else []
        wt = d.get("weak_threshold")
        return cls(ps, energy_p, sigma0, tuple(float(s) for s in sigmas), psis, flux_psi,
                   None if wt is None else float(wt))

    def to_dict(self) -> dict:
        out = {"p": list(self.p), "energy_p": self.energy_p, "sigma0": self.sigma0, "sigmas": list(self.sigmas),
               "psis": [dict(p) for p in self.psis]}
        if self.flux_psi is not None:
            out["flux_psi"] = dict(self.flux_psi)
        if self.weak_threshold is not None:
            out["weak_threshold"] = self.weak_threshold
        return out


_PSI_KEYS = {"name", "r_center", "r_width", "theta_center", "theta_width", "amp"}


def _check_psi(d, path: str) -> None:
    _take(d, "", path, _PSI_KEYS)
    for key in ("name", "r_center", "r_width"):
        if key not in d:
            raise ConfigError(f"{path}.{key}", "missing required value")


def _psi(d: dict, t_end: float) -> TestFunction:
    return TestFunction(
        str(d["name"]), float(d["r_center"]), float(d["r_width"]), t_end,
        float(d.get("theta_center", 0.0)),
        None if d.get("theta_width") is None else float(d["theta_width"]),
        float(d.get("amp", 1.0)),
    )


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    grid: GridConfig = field(default_factory=GridConfig)
    a: ProfileConfig = field(default_factory=ProfileConfig)
    b: ProfileConfig = field(default_factory=ProfileConfig)
    initial: InitialConfig = field(default_factory=InitialConfig)
    nus: tuple[float, ...] = (0.0,)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)
    description: str = ""

    def boundary_data(self) -> BoundaryData:
        return BoundaryData(self.a.build(self.grid), self.b.build(self.grid))

    def with_grid(self, n_r: int, n_theta: int) -> "ExperimentConfig":
        g = GridConfig(self.grid.r_inner, self.grid.r_outer, n_r, n_theta, self.grid.beta)
        return ExperimentConfig(self.name, g, self.a, self.b, self.initial, self.nus, self.integrator,
                                self.diagnostics, self.description)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        _take(d, "", "", {"name", "description", "grid", "boundary", "initial", "nu", "integrator", "diagnostics"})
        if "name" not in d:
            raise ConfigError("name", "missing required value")
        bnd = d.get("boundary") or {}
        _take(bnd, "", "boundary", {"a", "b"})
        nus = d.get("nu", [0.0])
        if not isinstance(nus, list):
            nus = [nus]
        vals = []
        for i, v in enumerate(nus):
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v) or v < 0:
                raise ConfigError(f"nu[{i}]", f"viscosity must be a finite number >= 0, got {v!r}")
            vals.append(float(v))
        if len(set(vals)) != len(vals):
            raise ConfigError("nu", f"duplicate viscosity in {vals}")
        vals.sort(reverse=True)
        grid = GridConfig.from_dict(d.get("grid") or {})
        if not grid.r_outer > grid.r_inner > 0:
            raise ConfigError("grid", "need 0 < r_inner < r_outer")
        if grid.n_r < 4 or grid.n_theta < 8 or grid.n_theta % 2:
            raise ConfigError("grid", "need n_r >= 4 and an even n_theta >= 8")
        return cls(
            str(d["name"]),
            grid,
            ProfileConfig.from_dict(bnd.get("a"), "boundary.a"),
            ProfileConfig.from_dict(bnd.get("b"), "boundary.b"),
            InitialConfig.from_dict(d.get("initial")),
            tuple(vals),
            IntegratorConfig.from_dict(d.get("integrator")),
            DiagnosticsConfig.from_dict(d.get("diagnostics")),
            str(d.get("description", "")),
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "grid": asdict(self.grid),
            "boundary": {"a": self.a.to_dict(), "b": self.b.to_dict()},
            "initial": asdict(self.initial),
            "nu": list(self.nus),
            "integrator": self.integrator.to_dict(),
            "diagnostics": self.diagnostics.to_dict(),
        }


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" (line {mark.line + 1}, column {mark.column + 1})" if mark else ""
        raise ConfigError("", f"{source}: YAML parse error{where}: {getattr(exc, 'problem', exc)}") from exc
    if not isinstance(data, dict):
        raise ConfigError("", f"{source}: top level must be a mapping")
    return ExperimentConfig.from_dict(data)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc.strerror}") from exc
    return parse_config(text, str(path))


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


EXPERIMENT_DIR = Path(__file__).resolve().parent.parent / "experiments"


def shipped_experiments() -> dict[str, Path]:
    return {p.stem: p for p in sorted(EXPERIMENT_DIR.glob("*.yaml"))}
