"""Deterministic reflected dynamics: oblique pushback and path solvers.

The controlled state moves by an Euler predictor and, whenever the predictor
leaves the closure of the domain, is pushed back along the oblique field
evaluated at the boundary contact point.  A windowed Picard iteration solves
the same problem as a fixed point and doubles as an independent check of the
stepper.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .geometry import CoefficientField, Domain, Ellipse, Disk, Interval, ObliqueField


class ReflectionError(RuntimeError):
    """Raised when the oblique pushback cannot be resolved."""


class ContractionError(RuntimeError):
    """Raised when the Picard iteration fails to contract."""


# ---------------------------------------------------------------------------
# Time grids, controls, paths


@dataclass(frozen=True)
class TimeGrid:
    nodes: np.ndarray  # (n_steps + 1,), strictly increasing

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        if nodes.ndim != 1 or len(nodes) < 2 or np.any(np.diff(nodes) <= 0):
            raise ValueError("time grid nodes must be strictly increasing, length >= 2")

    @classmethod
    def uniform(cls, t0: float, t_end: float, n_steps: int) -> "TimeGrid":
        if t_end <= t0 or n_steps < 1:
            raise ValueError("need t_end > t0 and n_steps >= 1")
        return cls(np.linspace(t0, t_end, n_steps + 1))

    @property
    def t0(self) -> float:
        return float(self.nodes[0])

    @property
    def t_end(self) -> float:
        return float(self.nodes[-1])

    @property
    def n_steps(self) -> int:
        return len(self.nodes) - 1

    @property
    def dts(self) -> np.ndarray:
        return np.diff(self.nodes)

    def refine(self, factor: int = 2) -> "TimeGrid":
        pieces = [np.linspace(self.nodes[k], self.nodes[k + 1], factor + 1)[:-1]
                  for k in range(self.n_steps)]
        return TimeGrid(np.concatenate(pieces + [self.nodes[-1:]]))


@dataclass
class Control:
    """Piecewise-constant control on a time grid (left-closed cells)."""

    grid: TimeGrid
    values: np.ndarray  # (n_steps, m)

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.values, dtype=float))
        if v.shape[0] != self.grid.n_steps:
            raise ValueError("control needs one value row per grid step")
        self.values = v

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @classmethod
    def zero(cls, grid: TimeGrid, m: int) -> "Control":
        return cls(grid, np.zeros((grid.n_steps, m)))

    @classmethod
    def from_function(cls, grid: TimeGrid, f: Callable[[float], np.ndarray]) -> "Control":
        vals = np.array([np.atleast_1d(f(t)) for t in grid.nodes[:-1]], dtype=float)
        return cls(grid, vals)

    def at(self, t: float) -> np.ndarray:
        k = int(np.searchsorted(self.grid.nodes, t, side="right")) - 1
        k = min(max(k, 0), self.grid.n_steps - 1)
        return self.values[k]

    def action(self) -> float:
        """Half the time integral of the squared control magnitude."""
        sq = np.sum(self.values ** 2, axis=1)
        return float(0.5 * np.sum(sq * self.grid.dts))


@dataclass(frozen=True)
class ReferencePath:
    """Path stored on a grid, evaluated by linear interpolation."""

    nodes: np.ndarray  # (k + 1,)
    values: np.ndarray  # (k + 1, d)

    def __post_init__(self):
        object.__setattr__(self, "nodes", np.asarray(self.nodes, dtype=float))
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v.reshape(-1, 1)
        object.__setattr__(self, "values", v)
        if len(self.nodes) != len(v):
            raise ValueError("reference path needs one value per node")

    @property
    def dimension(self) -> int:
        return self.values.shape[1]

    @classmethod
    def constant(cls, x, t0: float, t_end: float) -> "ReferencePath":
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return cls(np.array([t0, t_end]), np.stack([x, x]))

    @classmethod
    def from_function(cls, grid: TimeGrid, f: Callable[[float], np.ndarray]) -> "ReferencePath":
        vals = np.array([np.atleast_1d(f(t)) for t in grid.nodes], dtype=float)
        return cls(grid.nodes.copy(), vals)

    def at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.stack([np.interp(t, self.nodes, self.values[:, j])
                        for j in range(self.dimension)], axis=-1)
        return out


@dataclass
class ReflectedPath:
    grid: TimeGrid
    points: np.ndarray                 # (n_steps + 1, d)
    reflection_increments: np.ndarray  # (n_steps, d); row k landed at node k+1
    boundary_flags: np.ndarray         # (n_steps + 1,) bool
    tol_feas: float = 1e-8
    tol_bdry: float = 1e-6

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    @property
    def total_variation(self) -> float:
        return float(np.sum(np.linalg.norm(self.reflection_increments, axis=1)))

    def as_reference(self) -> ReferencePath:
        return ReferencePath(self.grid.nodes.copy(), self.points.copy())

    def max_deviation(self, ref: ReferencePath) -> float:
        g = ref.at(self.grid.nodes)
        return float(np.max(np.linalg.norm(self.points - g, axis=1)))

    def write_csv(self, path) -> None:
        n1, d = self.points.shape
        dz = np.vstack([np.zeros((1, d)), self.reflection_increments])
        cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(self.reflection_increments, axis=1))])
        cols = [self.grid.nodes] + [self.points[:, j] for j in range(d)] \
            + [dz[:, j] for j in range(d)] + [cum, self.boundary_flags.astype(float)]
        header = ",".join(["t"] + [f"x{j+1}" for j in range(d)]
                          + [f"dz{j+1}" for j in range(d)] + ["z_tv", "on_boundary"])
        np.savetxt(path, np.column_stack(cols), delimiter=",", header=header, comments="")


# ---------------------------------------------------------------------------
# Oblique pushback


def _pushback_lambda(domain: Domain, p: np.ndarray, g: np.ndarray, c0: float) -> float:
    """Minimal lambda >= 0 with ``p - lambda*g`` on the boundary."""
    if isinstance(domain, Interval):
        x = p[0]
        if x < domain.a:
            lam = (x - domain.a) / g[0]
        else:
            lam = (x - domain.b) / g[0]
        if not np.isfinite(lam) or lam < 0.0:
            raise ReflectionError(f"pushback direction {g} does not reenter the interval")
        return float(lam)
    if isinstance(domain, (Disk, Ellipse)):
        if isinstance(domain, Disk):
            scale = np.array([domain.radius, domain.radius])
        else:
            scale = domain.semi_axes
        z = (p - domain.center) / scale
        h = g / scale
        a = float(h @ h)
        b = float(z @ h)
        c = float(z @ z - 1.0)
        disc = b * b - a * c
        if disc < 0.0 or a <= 0.0:
            raise ReflectionError(f"pushback ray from {p} along {g} misses the boundary")
        lam = (b - np.sqrt(disc)) / a
        if lam < 0.0:
            # p already inside (c <= 0): smallest nonnegative root is 0.
            lam = 0.0 if c <= 0.0 else (b + np.sqrt(disc)) / a
        if lam < 0.0:
            raise ReflectionError(f"pushback ray from {p} along {g} exits the domain")
        return float(lam)
    # Generic level-set domain: safeguarded bracketing bisection on the ray.
    f0 = domain.signed_distance(p)
    if f0 >= 0.0:
        return 0.0
    hi = 2.0 * abs(f0) / max(c0, 1e-12)
    fhi = domain.signed_distance(p - hi * g)
    for _ in range(60):
        if fhi >= 0.0:
            break
        hi *= 2.0
        fhi = domain.signed_distance(p - hi * g)
    else:
        raise ReflectionError(f"could not bracket pushback from {p} along {g}")
    return float(brentq(lambda lam: domain.signed_distance(p - lam * g),
                        0.0, hi, xtol=1e-14, rtol=8.9e-16))


def reflect_step(domain: Domain, field: ObliqueField, p, tol: float = 1e-12,
                 max_rounds: int = 200):
    """Push an exterior predictor ``p`` back into the closure along the field.

    Returns the corrected point and the reflection increment ``dz`` (so that
    corrected = p - dz).  Interior points are returned unchanged.
    """
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if domain.signed_distance(p) >= 0.0:
        return p, np.zeros_like(p)
    c = domain.project_to_boundary(p)
    lam_prev = None
    for _ in range(max_rounds):
        g = field(c)
        lam = _pushback_lambda(domain, p, g, field.c0)
        q = p - lam * g
        if lam_prev is not None and abs(lam - lam_prev) < tol:
            return q, lam * g
        lam_prev = lam
        c = domain.project_to_boundary(q)
    raise ReflectionError(f"oblique pushback did not converge from {p}")


# ---------------------------------------------------------------------------
# Path solvers


def _checked_grid(grid: TimeGrid, t0: float) -> TimeGrid:
    if abs(grid.t0 - t0) > 1e-12:
        raise ValueError(f"grid starts at {grid.t0}, expected t0 = {t0}")
    return grid


def _drift(coeffs: CoefficientField, control: Optional[Control], t: float,
           x: np.ndarray) -> np.ndarray:
    b = np.atleast_1d(np.asarray(coeffs.b(t, x), dtype=float))
    if control is None:
        return b
    sig = np.atleast_2d(np.asarray(coeffs.sigma(t, x), dtype=float))
    return b - sig @ control.at(t)


def _euler_reflect(domain: Domain, field: ObliqueField, x0: np.ndarray, grid: TimeGrid,
                   drift_at: Callable[[int, np.ndarray], np.ndarray],
                   shock_at: Optional[Callable[[int, np.ndarray], np.ndarray]] = None,
                   tol_bdry: float = 1e-6):
    """Shared Euler-predictor / oblique-corrector loop."""
    nodes = grid.nodes
    n = grid.n_steps
    d = len(x0)
    pts = np.empty((n + 1, d))
    incs = np.zeros((n, d))
    pts[0] = x0
    x = x0
    for k in range(n):
        dt = nodes[k + 1] - nodes[k]
        p = x + drift_at(k, x) * dt
        if shock_at is not None:
            p = p + shock_at(k, x)
        if domain.signed_distance(p) < 0.0:
            q, dz = reflect_step(domain, field, p)
            incs[k] = dz
            x = q
        else:
            x = p
        pts[k + 1] = x
    sd = domain.signed_distance_many(pts)
    flags = np.abs(sd) <= tol_bdry
    return pts, incs, flags


def solve_reflected_ode(domain: Domain, field: ObliqueField, coeffs: CoefficientField,
                        control: Optional[Control], t0: float, x, grid: TimeGrid) -> ReflectedPath:
    """Controlled reflected Euler path on the given grid.

    The drift is ``b - sigma @ alpha`` with the control held piecewise
    constant; the corrector pushes exterior predictors back along the oblique
    field.
    """
    grid = _checked_grid(grid, t0)
    x0 = np.atleast_1d(np.asarray(x, dtype=float))
    if domain.signed_distance(x0) < -1e-12:
        raise ValueError(f"start point {x0} lies outside the closure")

    def drift_at(k, xk):
        return _drift(coeffs, control, grid.nodes[k], xk)

    pts, incs, flags = _euler_reflect(domain, field, x0, grid, drift_at)
    return ReflectedPath(grid=grid, points=pts, reflection_increments=incs,
                         boundary_flags=flags)


def _frozen_pass(domain, field, coeffs, control, grid, x0, frozen):
    """One Picard sweep: coefficients frozen along ``frozen``, path reflected."""

    def drift_at(k, _xk):
        return _drift(coeffs, control, grid.nodes[k], frozen[k])

    return _euler_reflect(domain, field, x0, grid, drift_at)


@dataclass
class PicardDiagnostics:
    window_count: int
    iterations: list
    ratios: list
    max_ratio: float


def solve_skorokhod_picard(domain: Domain, field: ObliqueField, coeffs: CoefficientField,
                           control: Optional[Control], t0: float, x, grid: TimeGrid,
                           tol: float = 1e-10, eta: Optional[float] = None,
                           max_iter: int = 200):
    """Windowed Picard fixed-point solve of the reflected dynamics.

    The horizon is split into windows; on each window the map freezes the
    state dependence of the coefficients along the previous iterate and
    re-solves the reflection.  The window length is halved until the measured
    contraction factor is at most one half.  Returns the path and diagnostics.
    """
    grid = _checked_grid(grid, t0)
    x0 = np.atleast_1d(np.asarray(x, dtype=float))
    horizon = grid.t_end - grid.t0
    if eta is not None:
        n_win = max(1, int(np.ceil(horizon / eta)))
    else:
        n_win = 1
    while True:
        try:
            return _picard_run(domain, field, coeffs, control, grid, x0, n_win, tol, max_iter)
        except ContractionError:
            if n_win >= grid.n_steps:
                raise
            n_win = min(2 * n_win, grid.n_steps)


def _picard_run(domain, field, coeffs, control, grid, x0, n_win, tol, max_iter):
    chunks = np.array_split(np.arange(grid.n_steps), n_win)
    all_pts = [x0[None, :]]
    all_incs = []
    all_flags = [np.array([abs(domain.signed_distance(x0)) <= 1e-6])]
    xw = x0
    iters, ratios = [], []
    for chunk in chunks:
        if len(chunk) == 0:
            continue
        i0, i1 = chunk[0], chunk[-1] + 1
        sub = TimeGrid(grid.nodes[i0:i1 + 1])
        frozen = np.repeat(xw[None, :], sub.n_steps + 1, axis=0)
        prev_dist = None
        bad_streak = 0
        for it in range(1, max_iter + 1):
            pts, incs, flags = _frozen_pass(domain, field, coeffs, control, sub, xw, frozen)
            dist = float(np.max(np.linalg.norm(pts - frozen, axis=1)))
            frozen = pts
            if prev_dist is not None and prev_dist > 10.0 * tol:
                ratio = dist / prev_dist if prev_dist > 0 else 0.0
                ratios.append(ratio)
                if ratio > 0.5:
                    raise ContractionError(
                        f"Picard contraction {ratio:.3f} > 0.5 on window starting at t={sub.t0}")
                bad_streak = bad_streak + 1 if ratio >= 1.0 else 0
                if bad_streak >= 10:
                    raise ContractionError("no contraction over 10 successive iterates")
            if dist <= tol:
                iters.append(it)
                break
            prev_dist = dist
        else:
            raise ContractionError(f"Picard did not reach tol={tol} in {max_iter} iterations")
        all_pts.append(pts[1:])
        all_incs.append(incs)
        all_flags.append(flags[1:])
        xw = pts[-1]
    path = ReflectedPath(
        grid=grid,
        points=np.vstack(all_pts),
        reflection_increments=np.vstack(all_incs) if all_incs else np.zeros((0, len(x0))),
        boundary_flags=np.concatenate(all_flags),
    )
    diag = PicardDiagnostics(window_count=n_win, iterations=iters, ratios=ratios,
                             max_ratio=float(max(ratios)) if ratios else 0.0)
    return path, diag


@dataclass(frozen=True)
class FlowReport:
    defect: float
    restart_time: float


def flow_check(domain: Domain, field: ObliqueField, coeffs: CoefficientField,
               control: Optional[Control], t0: float, x, grid: TimeGrid,
               s_mid: float) -> FlowReport:
    """Restart the solve at an intermediate time and measure the mismatch."""
    if not (grid.t0 < s_mid < grid.t_end):
        raise ValueError("restart time must lie strictly inside the horizon")
    full = solve_reflected_ode(domain, field, coeffs, control, t0, x, grid)
    nodes = grid.nodes
    j = int(np.searchsorted(nodes, s_mid))
    if j < len(nodes) and abs(nodes[j] - s_mid) < 1e-12:
        restart_nodes = nodes[j:]
        x_mid = full.points[j]
        tail_idx = np.arange(j, len(nodes))
    else:
        restart_nodes = np.concatenate([[s_mid], nodes[j:]])
        x_mid = full.as_reference().at(s_mid)
        tail_idx = np.arange(j, len(nodes))
    sub = TimeGrid(restart_nodes)
    restart = solve_reflected_ode(domain, field, coeffs, control, sub.t0, x_mid, sub)
    tail_pts = restart.points[-len(tail_idx):]
    defect = float(np.max(np.linalg.norm(full.points[tail_idx] - tail_pts, axis=1)))
    return FlowReport(defect=defect, restart_time=s_mid)


# ---------------------------------------------------------------------------
# Path diagnostics


@dataclass(frozen=True)
class PathReport:
    min_signed_distance: float
    n_reflections: int
    max_offboundary_increment: float
    max_angle: float

    def ok(self, tol_feas: float = 1e-8, tol_bdry: float = 1e-6,
           tol_angle: float = 1e-6) -> bool:
        return (self.min_signed_distance >= -tol_feas
                and self.max_offboundary_increment <= tol_bdry
                and self.max_angle <= tol_angle)


def validate_reflected_path(domain: Domain, field: ObliqueField,
                            path: ReflectedPath) -> PathReport:
    """Feasibility, boundary-localization, and direction checks for a path."""
    sd = domain.signed_distance_many(path.points)
    sizes = np.linalg.norm(path.reflection_increments, axis=1)
    active = sizes > 0.0
    worst_off = 0.0
    worst_angle = 0.0
    for k in np.nonzero(active)[0]:
        endpoint = path.points[k + 1]
        worst_off = max(worst_off, abs(float(domain.signed_distance(endpoint))))
        contact = domain.project_to_boundary(endpoint)
        g = field(contact)
        dz = path.reflection_increments[k]
        cosang = float(dz @ g) / (np.linalg.norm(dz) * np.linalg.norm(g))
        worst_angle = max(worst_angle, float(np.arccos(np.clip(cosang, -1.0, 1.0))))
    return PathReport(
        min_signed_distance=float(sd.min()),
        n_reflections=int(active.sum()),
        max_offboundary_increment=worst_off,
        max_angle=worst_angle,
    )


def holder_half_quotient(path: ReflectedPath, max_lags: int = 4096) -> float:
    """Largest ratio |Y_s - Y_r| / sqrt(s - r) over node pairs."""
    pts = path.points
    nodes = path.grid.nodes
    n = len(nodes) - 1
    if n <= max_lags:
        lags = range(1, n + 1)
    else:
        small = np.arange(1, 65)
        geo = np.unique(np.geomspace(65, n, max_lags - 64).astype(int))
        lags = np.concatenate([small, geo])
    best = 0.0
    for lag in lags:
        dy = np.linalg.norm(pts[lag:] - pts[:-lag], axis=1)
        dt = nodes[lag:] - nodes[:-lag]
        best = max(best, float(np.max(dy / np.sqrt(dt))))
    return best
