"""Annular domain, polar mesh and boundary data.

Index conventions used throughout the package:

* fields are arrays of shape ``(n_r + 1, n_theta)``; axis 0 is radial with
  ``r[0] = r_inner`` and ``r[-1] = r_outer``, axis 1 is the periodic angle;
* boundary traces are arrays of shape ``(2, n_theta)`` ordered
  ``[inner, outer]`` so that ``trace[k]`` lives on radial row ``BOUNDARY_ROWS[k]``;
* the outward normal is ``-e_r`` on the inner circle and ``+e_r`` on the outer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

INNER, OUTER = 0, 1
BOUNDARY_ROWS = (0, -1)
NORMAL_SIGN = np.array([-1.0, 1.0])

INFLOW, IMPERMEABLE, OUTFLOW = -1, 0, 1


class CompatibilityError(ValueError):
    """Net boundary flux of the normal-velocity datum does not vanish."""

    def __init__(self, residual: float, tolerance: float):
        self.residual = residual
        self.tolerance = tolerance
        super().__init__(
            f"boundary flux compatibility violated: integral of a over the boundary = "
            f"{residual:.6e} (tolerance {tolerance:.1e})"
        )


def _radial_nodes(r_inner: float, r_outer: float, n_r: int, beta: float) -> np.ndarray:
    xi = np.linspace(-1.0, 1.0, n_r + 1)
    if beta == 0.0:
        x = xi
    else:
        x = np.tanh(beta * xi) / math.tanh(beta)
    r = r_inner + 0.5 * (r_outer - r_inner) * (x + 1.0)
    r[0], r[-1] = r_inner, r_outer
    return r


@dataclass(frozen=True, eq=False)
class Grid:
    """Polar node mesh of the annulus ``r_inner < r < r_outer``.

    Each node owns the control volume bounded by the radial midpoints
    ``rho_minus``/``rho_plus`` (half cells on the two circles) and by the
    angular midpoints ``theta_j -+ dtheta / 2``.
    """

    r_inner: float
    r_outer: float
    n_r: int
    n_theta: int
    stretching: float = 0.0
    r: np.ndarray = field(init=False, repr=False)
    theta: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        r = _radial_nodes(self.r_inner, self.r_outer, self.n_r, self.stretching)
        theta = 2.0 * np.pi * np.arange(self.n_theta) / self.n_theta
        for arr in (r, theta):
            arr.setflags(write=False)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "theta", theta)

        mid = 0.5 * (r[1:] + r[:-1])
        rho_minus = np.concatenate([[r[0]], mid])
        rho_plus = np.concatenate([mid, [r[-1]]])
        cell_area = 0.5 * (rho_plus**2 - rho_minus**2) * self.dtheta
        for name, arr in (
            ("rho_minus", rho_minus),
            ("rho_plus", rho_plus),
            ("dr", np.diff(r)),
            ("cell_area", cell_area),
        ):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    # identity by construction parameters so grids can key solver caches
    @property
    def key(self) -> tuple:
        return (self.r_inner, self.r_outer, self.n_r, self.n_theta, self.stretching)

    def __eq__(self, other):
        return isinstance(other, Grid) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_r + 1, self.n_theta)

    @property
    def dtheta(self) -> float:
        return 2.0 * np.pi / self.n_theta

    @property
    def width(self) -> float:
        return self.r_outer - self.r_inner

    @property
    def radii(self) -> np.ndarray:
        """Radius of each boundary circle, ordered [inner, outer]."""
        return np.array([self.r_inner, self.r_outer])

    @property
    def curvature(self) -> np.ndarray:
        """Signed boundary curvature [inner, outer].

        Positive where the boundary is convex seen from the fluid (outer
        circle), negative on the inner circle.  With the tangent
        ``tau = (-n_2, n_1)`` this is the sign for which
        ``2 D(v) n . tau + 2 k v . tau = rot v + 2 d(v.n)/d tau`` holds.
        """
        return np.array([-1.0 / self.r_inner, 1.0 / self.r_outer])

    @property
    def weights(self) -> np.ndarray:
        """Area quadrature weights (control-volume areas), broadcast to field shape."""
        return np.broadcast_to(self.cell_area[:, None], self.shape)

    @property
    def total_area(self) -> float:
        return float(np.pi * (self.r_outer**2 - self.r_inner**2))

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.r, self.theta, indexing="ij")

    def cartesian(self) -> tuple[np.ndarray, np.ndarray]:
        rr, tt = self.mesh()
        return rr * np.cos(tt), rr * np.sin(tt)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def min_spacing(self) -> float:
        """Smallest of the radial and arc cell widths."""
        return float(min(self.dr.min(), self.r_inner * self.dtheta))

    def distance(self) -> "DistanceField":
        return DistanceField.build(self)


def build_grid(r_inner: float, r_outer: float, n_r: int, n_theta: int, beta: float = 0.0) -> Grid:
    """Build the annular mesh; ``beta > 0`` clusters nodes toward both circles."""
    if not (r_inner > 0 and math.isfinite(r_inner)):
        raise ValueError(f"inner radius must be positive, got {r_inner}")
    if not (r_outer > r_inner and math.isfinite(r_outer)):
        raise ValueError(f"need r_inner < r_outer, got {r_inner} >= {r_outer}")
    if int(n_r) != n_r or n_r < 4:
        raise ValueError(f"n_r must be an integer >= 4, got {n_r}")
    if int(n_theta) != n_theta or n_theta < 8 or n_theta % 2:
        raise ValueError(f"n_theta must be an even integer >= 8, got {n_theta}")
    if not (beta >= 0 and math.isfinite(beta)):
        raise ValueError(f"stretching must be >= 0, got {beta}")
    return Grid(float(r_inner), float(r_outer), int(n_r), int(n_theta), float(beta))


@dataclass(frozen=True)
class VectorField:
    """Velocity-like field stored by polar components (``r`` radial, ``t`` azimuthal)."""

    r: np.ndarray
    t: np.ndarray

    def __add__(self, other: "VectorField") -> "VectorField":
        return VectorField(self.r + other.r, self.t + other.t)

    def __sub__(self, other: "VectorField") -> "VectorField":
        return VectorField(self.r - other.r, self.t - other.t)

    def __mul__(self, c: float) -> "VectorField":
        return VectorField(c * self.r, c * self.t)

    __rmul__ = __mul__

    def dot(self, other: "VectorField") -> np.ndarray:
        return self.r * other.r + self.t * other.t

    def cross(self, other: "VectorField") -> np.ndarray:
        """Scalar ``z x u = z_1 u_2 - z_2 u_1`` (rotation invariant, so polar works)."""
        return self.r * other.t - self.t * other.r

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.r, self.t)

    def cartesian(self, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
        c, s = np.cos(grid.theta)[None, :], np.sin(grid.theta)[None, :]
        return self.r * c - self.t * s, self.r * s + self.t * c

    @classmethod
    def zeros(cls, grid: Grid) -> "VectorField":
        return cls(grid.zeros(), grid.zeros())


@dataclass(frozen=True)
class DistanceField:
    """Distance to the boundary and its gradient (radial component only)."""

    d: np.ndarray
    grad_d: VectorField

    @classmethod
    def build(cls, grid: Grid) -> "DistanceField":
        rr, _ = grid.mesh()
        d_in = rr - grid.r_inner
        d_out = grid.r_outer - rr
        d = np.minimum(d_in, d_out)
        # the equidistant mid circle is assigned to the inner side
        sign = np.where(d_in <= d_out, 1.0, -1.0)
        return cls(d, VectorField(sign, np.zeros_like(d)))


# ---------------------------------------------------------------------------
# boundary data catalog


@dataclass(frozen=True)
class Term:
    """One catalog term of a boundary profile: ``const``, ``cos`` or ``sin`` of ``mode * theta``."""

    kind: str
    amp: float
    mode: int = 0

    def __post_init__(self):
        if self.kind not in ("const", "cos", "sin"):
            raise ValueError(f"unknown profile term kind {self.kind!r}")
        if self.kind != "const" and self.mode < 1:
            raise ValueError("cos/sin terms need mode >= 1")

    def value(self, theta: np.ndarray) -> np.ndarray:
        if self.kind == "const":
            return np.full_like(theta, self.amp, dtype=float)
        f = np.cos if self.kind == "cos" else np.sin
        return self.amp * f(self.mode * theta)

    def dtheta(self, theta: np.ndarray) -> np.ndarray:
        m = self.mode
        if self.kind == "const":
            return np.zeros_like(theta, dtype=float)
        if self.kind == "cos":
            return -self.amp * m * np.sin(m * theta)
        return self.amp * m * np.cos(m * theta)

    def mean(self) -> float:
        return self.amp if self.kind == "const" else 0.0


@dataclass(frozen=True)
class Ramp:
    """Time envelope; ``smooth`` rises as ``(1 - cos(pi t / t_ramp)) / 2`` then stays at 1."""

    kind: str = "none"
    t_ramp: float = 1.0

    def __post_init__(self):
        if self.kind not in ("none", "smooth"):
            raise ValueError(f"unknown ramp kind {self.kind!r}")
        if self.kind == "smooth" and not self.t_ramp > 0:
            raise ValueError("smooth ramp needs t_ramp > 0")

    @property
    def constant(self) -> bool:
        return self.kind == "none"

    def __call__(self, t: float) -> float:
        if self.kind == "none" or t >= self.t_ramp:
            return 1.0
        if t <= 0.0:
            return 0.0
        return 0.5 * (1.0 - math.cos(math.pi * t / self.t_ramp))

    def derivative(self, t: float) -> float:
        if self.kind == "none" or t >= self.t_ramp or t <= 0.0:
            return 0.0
        return 0.5 * math.pi / self.t_ramp * math.sin(math.pi * t / self.t_ramp)


@dataclass(frozen=True)
class Profile:
    """Boundary trace on both circles: ``ramp(t) * sum(terms)`` per circle."""

    inner: tuple[Term, ...] = ()
    outer: tuple[Term, ...] = ()
    ramp: Ramp = Ramp()

    def _circle(self, k: int) -> tuple[Term, ...]:
        return self.inner if k == INNER else self.outer

    def base_trace(self, theta: np.ndarray) -> np.ndarray:
        """Unramped trace, shape (2, theta.size)."""
        out = np.zeros((2, theta.size))
        for k in (INNER, OUTER):
            for term in self._circle(k):
                out[k] += term.value(theta)
        return out

    def trace(self, theta: np.ndarray, t: float) -> np.ndarray:
        return self.ramp(t) * self.base_trace(theta)

    def trace_dtheta(self, theta: np.ndarray, t: float) -> np.ndarray:
        out = np.zeros((2, theta.size))
        for k in (INNER, OUTER):
            for term in self._circle(k):
                out[k] += term.dtheta(theta)
        return self.ramp(t) * out

    def trace_dt(self, theta: np.ndarray, t: float) -> np.ndarray:
        return self.ramp.derivative(t) * self.base_trace(theta)

    def amplitude_bound(self) -> float:
        """Upper bound of ``|trace|`` over all points and times."""
        return max(sum(abs(term.amp) for term in self._circle(k)) for k in (INNER, OUTER))

    @property
    def is_zero(self) -> bool:
        return all(term.amp == 0.0 for k in (INNER, OUTER) for term in self._circle(k))


def source_profile(q: float, r_inner: float, r_outer: float, ramp: Ramp = Ramp()) -> Profile:
    """Radial source of strength ``q``: uniform inflow on the inner circle, outflow on the outer."""
    return Profile(
        inner=(Term("const", -q / (2 * np.pi * r_inner)),),
        outer=(Term("const", q / (2 * np.pi * r_outer)),),
        ramp=ramp,
    )


@dataclass(frozen=True)
class BoundaryData:
    """Normal velocity ``a`` and vorticity ``b`` on the boundary.

    ``eps_rel`` sets the classification band ``eps_a = eps_rel * max|a(., t)|``;
    ``eps_abs`` overrides it when given.
    """

    a: Profile = Profile()
    b: Profile = Profile()
    eps_rel: float = 1e-10
    eps_abs: float | None = None

    def a_trace(self, grid: Grid, t: float) -> np.ndarray:
        return self.a.trace(grid.theta, t)

    def b_trace(self, grid: Grid, t: float) -> np.ndarray:
        return self.b.trace(grid.theta, t)

    def flux_residual(self, grid: Grid, t: float) -> float:
        """Trapezoidal quadrature of ``a`` over both circles (arc length measure)."""
        a = self.a_trace(grid, t)
        return float(grid.dtheta * (grid.r_inner * a[INNER].sum() + grid.r_outer * a[OUTER].sum()))

    def check_compatibility(self, grid: Grid) -> float:
        """Raise :class:`CompatibilityError` unless the net flux of ``a`` vanishes.

        The ramp is a common factor, so checking the unramped profile covers all times.
        """
        a = self.a.base_trace(grid.theta)
        res = float(grid.dtheta * (grid.r_inner * a[INNER].sum() + grid.r_outer * a[OUTER].sum()))
        amax = float(np.abs(a).max())
        tol = 1e-10 * amax if amax > 0 else 1e-14
        if abs(res) > tol:
            raise CompatibilityError(res, tol)
        return res

    def eps_a(self, grid: Grid, t: float) -> float:
        if self.eps_abs is not None:
            return self.eps_abs
        return self.eps_rel * float(np.abs(self.a_trace(grid, t)).max())

    @property
    def time_constant(self) -> bool:
        return self.a.ramp.constant and self.b.ramp.constant


def classify_boundary(bd: BoundaryData, grid: Grid, t: float) -> np.ndarray:
    """Label boundary nodes INFLOW (-1), IMPERMEABLE (0) or OUTFLOW (+1); shape (2, n_theta)."""
    a = bd.a_trace(grid, t)
    eps = bd.eps_a(grid, t)
    labels = np.zeros(a.shape, dtype=np.int8)
    labels[a < -eps] = INFLOW
    labels[a > eps] = OUTFLOW
    return labels


def profile_from_terms(inner: Sequence[Term], outer: Sequence[Term], ramp: Ramp | None = None) -> Profile:
    return Profile(tuple(inner), tuple(outer), ramp or Ramp())
