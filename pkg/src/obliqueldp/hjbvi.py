"""Explicit monotone grid solvers for obstacle Hamilton-Jacobi problems.

Backward time stepping with a local Lax-Friedrichs numerical Hamiltonian for
H(x, p) = |sigma^T p|^2 / 2 - b . p, an optional central second-order term
scaled by eps^2 / 2, pointwise obstacle projection after every step, and a
zero oblique-derivative boundary condition enforced through ghost values
pulled back along the reflection field.
"""

from __future__ import annotations

import csv
import io
import zipfile
from dataclasses import dataclass, field as dataclass_field
from typing import Callable, Optional

import numpy as np

from .geometry import CoefficientField, Domain, ObliqueField
from .sde import NoiseScale

MIN_TYPE = "min_type"
MAX_TYPE = "max_type"


class CflError(RuntimeError):
    """Raised when the time step violates the stability bound."""


class NanError(RuntimeError):
    """Raised when a layer goes non-finite during stepping."""


class StencilError(RuntimeError):
    """Raised when no admissible oblique ghost stencil exists at a node."""


Obstacle = Callable[[float, np.ndarray], np.ndarray]


def tube_obstacle(reference, radius: float, height: float, complement: bool = False,
                  smoothing: float = 0.0) -> Obstacle:
    """Height times the (mollified) indicator of an instantaneous tube.

    ``reference`` maps time to a point (a ReferencePath).  Membership is
    strict inclusion within ``radius``; with ``smoothing`` w > 0 the jump is
    replaced by a linear ramp over the band [radius - w, radius].
    """

    def psi(t: float, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        dist = np.linalg.norm(X - np.asarray(reference.at(t))[None, :], axis=1)
        if smoothing > 0.0:
            ramp = np.clip((dist - (radius - smoothing)) / smoothing, 0.0, 1.0)
        else:
            ramp = (dist >= radius).astype(float)
        return height * (ramp if complement else (1.0 - ramp))

    return psi


def constant_obstacle(height: float) -> Obstacle:
    def psi(t, X):
        return np.full(np.atleast_2d(X).shape[0], float(height))
    return psi


@dataclass
class ValueGrid:
    axes: tuple                      # one or two 1-d coordinate arrays
    mask: np.ndarray                 # active-node flags on the full lattice
    times: np.ndarray                # stored layer times, increasing
    layers: np.ndarray               # (n_stored, n_active) values
    h: float
    dt: float
    vi_type: str
    eps: float
    meta: dict = dataclass_field(default_factory=dict)

    @property
    def dimension(self) -> int:
        return len(self.axes)

    @property
    def points(self) -> np.ndarray:
        """Coordinates of the active nodes, (n_active, d)."""
        if self.dimension == 1:
            return self.axes[0][self.mask].reshape(-1, 1)
        XX, YY = np.meshgrid(self.axes[0], self.axes[1], indexing="ij")
        return np.stack([XX[self.mask], YY[self.mask]], axis=1)

    def layer_at(self, t: float) -> np.ndarray:
        """Linear-in-time interpolation between stored layers."""
        ts = self.times
        if t <= ts[0]:
            return self.layers[0]
        if t >= ts[-1]:
            return self.layers[-1]
        j = int(np.searchsorted(ts, t, side="right")) - 1
        w = (t - ts[j]) / (ts[j + 1] - ts[j])
        return (1.0 - w) * self.layers[j] + w * self.layers[j + 1]

    def value_at(self, t: float, x) -> float:
        """Value at (t, x): linear in time and space between stored data."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        layer = self.layer_at(t)
        if self.dimension == 1:
            xs = self.axes[0][self.mask]
            return float(np.interp(x[0], xs, layer))
        full = np.full(self.mask.shape, np.nan)
        full[self.mask] = layer
        xs, ys = self.axes
        i = int(np.clip(np.searchsorted(xs, x[0]) - 1, 0, len(xs) - 2))
        j = int(np.clip(np.searchsorted(ys, x[1]) - 1, 0, len(ys) - 2))
        fx = (x[0] - xs[i]) / (xs[i + 1] - xs[i])
        fy = (x[1] - ys[j]) / (ys[j + 1] - ys[j])
        cell = full[i:i + 2, j:j + 2]
        if np.any(np.isnan(cell)):
            pts = self.points
            k = int(np.argmin(np.linalg.norm(pts - x[None, :], axis=1)))
            return float(layer[k])
        return float((1 - fx) * (1 - fy) * cell[0, 0] + fx * (1 - fy) * cell[1, 0]
                     + (1 - fx) * fy * cell[0, 1] + fx * fy * cell[1, 1])

    def export_csv(self, path) -> None:
        pts = self.points
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{j+1}" for j in range(self.dimension)] + ["v"])
            for ti, layer in zip(self.times, self.layers):
                for p, v in zip(pts, layer):
                    w.writerow([f"{ti:.10g}"] + [f"{c:.10g}" for c in p] + [f"{v:.17g}"])

    def save_npz(self, path) -> None:
        buf = io.BytesIO()
        np.savez_compressed(
            buf, dim=self.dimension, mask=self.mask, times=self.times,
            layers=self.layers, h=self.h, dt=self.dt, eps=self.eps,
            vi_type=self.vi_type, **{f"axis{j}": a for j, a in enumerate(self.axes)})
        buf.seek(0)
        # rewrite the archive with fixed entry timestamps so the same grid
        # always produces the same bytes
        with zipfile.ZipFile(buf) as src, \
                zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as dst:
            for info in src.infolist():
                fixed = zipfile.ZipInfo(info.filename,
                                        date_time=(1980, 1, 1, 0, 0, 0))
                fixed.compress_type = zipfile.ZIP_DEFLATED
                dst.writestr(fixed, src.read(info.filename))


def load_npz(path) -> ValueGrid:
    with np.load(path, allow_pickle=False) as z:
        dim = int(z["dim"])
        axes = tuple(z[f"axis{j}"] for j in range(dim))
        return ValueGrid(axes=axes, mask=z["mask"], times=z["times"], layers=z["layers"],
                         h=float(z["h"]), dt=float(z["dt"]), vi_type=str(z["vi_type"]),
                         eps=float(z["eps"]))


# ---------------------------------------------------------------------------
# Discretization workspace


def _ghost_stencils_2d(domain: Domain, field: ObliqueField, xs, ys, mask, flat_index):
    """Pullback interpolation data for each missing neighbor of an active node.

    A ghost point g outside the active set takes the value of the previous
    layer at q = g - s * gamma(contact), with s grown until q sits safely
    inside a fully active cell; reading q by bilinear interpolation encodes a
    zero derivative along gamma to first order.
    """
    h = xs[1] - xs[0]
    nx, ny = len(xs), len(ys)
    idx4, wts4, slots = [], [], []
    offsets = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    for (i, j) in zip(*np.nonzero(mask)):
        for slot, (di, dj) in enumerate(offsets):
            ii, jj = i + di, j + dj
            if 0 <= ii < nx and 0 <= jj < ny and mask[ii, jj]:
                continue
            g = np.array([xs[i] + di * h, ys[j] + dj * h])
            contact = domain.project_to_boundary(g)
            gam = field(contact)
            gam = gam / np.linalg.norm(gam)
            placed = False
            s = 0.5 * h
            while s <= 6.0 * h:
                q = g - s * gam
                if domain.signed_distance(q) >= 0.25 * h:
                    i0 = int(np.clip(np.searchsorted(xs, q[0]) - 1, 0, nx - 2))
                    j0 = int(np.clip(np.searchsorted(ys, q[1]) - 1, 0, ny - 2))
                    corners = [(i0, j0), (i0 + 1, j0), (i0, j0 + 1), (i0 + 1, j0 + 1)]
                    if all(mask[a, b] for a, b in corners):
                        fx = (q[0] - xs[i0]) / h
                        fy = (q[1] - ys[j0]) / h
                        idx4.append([flat_index[a, b] for a, b in corners])
                        wts4.append([(1 - fx) * (1 - fy), fx * (1 - fy),
                                     (1 - fx) * fy, fx * fy])
                        slots.append((flat_index[i, j], slot))
                        placed = True
                        break
                s += 0.25 * h
            if not placed:
                raise StencilError(
                    f"no oblique ghost stencil at node ({xs[i]:.4g}, {ys[j]:.4g}) slot {slot}")
    return (np.array(idx4, dtype=int).reshape(-1, 4),
            np.array(wts4, dtype=float).reshape(-1, 4),
            slots)


class _Workspace:
    """Lattice, active mask, ghost tables, and the one-step update kernel."""

    def __init__(self, domain: Domain, field: ObliqueField, coeffs: CoefficientField,
                 n_x: Optional[int]):
        d = domain.dimension
        if n_x is None:
            n_x = 200 if d == 1 else 80
        box = domain.bounding_box
        xs = np.linspace(box[0, 0], box[0, 1], n_x)
        h = xs[1] - xs[0]
        self.domain = domain
        self.coeffs = coeffs
        self.d = d
        self.h = float(h)
        if d == 1:
            mask = domain.signed_distance_many(xs.reshape(-1, 1)) >= -1e-12
            act = np.nonzero(mask)[0]
            if not np.array_equal(act, np.arange(act[0], act[-1] + 1)):
                raise StencilError("active nodes must be contiguous in one dimension")
            self.axes = (xs,)
            self.mask = mask
            self.pts = xs[mask].reshape(-1, 1)
            self.gather = None
        else:
            ys = box[1, 0] + h * np.arange(int(round((box[1, 1] - box[1, 0]) / h)) + 1)
            XX, YY = np.meshgrid(xs, ys, indexing="ij")
            lattice = np.stack([XX.ravel(), YY.ravel()], axis=1)
            mask = (domain.signed_distance_many(lattice) >= -1e-12).reshape(XX.shape)
            flat_index = -np.ones(mask.shape, dtype=int)
            flat_index[mask] = np.arange(mask.sum())
            g_idx, g_wts, g_slots = _ghost_stencils_2d(domain, field, xs, ys, mask,
                                                       flat_index)
            n_act = int(mask.sum())
            nbr = np.empty((n_act, 4), dtype=int)
            ghost_of = {key: n_act + g for g, key in enumerate(g_slots)}
            offsets = [(-1, 0), (1, 0), (0, -1), (0, 1)]
            for (i, j) in zip(*np.nonzero(mask)):
                me = flat_index[i, j]
                for slot, (di, dj) in enumerate(offsets):
                    ii, jj = i + di, j + dj
                    if (0 <= ii < mask.shape[0] and 0 <= jj < mask.shape[1]
                            and mask[ii, jj]):
                        nbr[me, slot] = flat_index[ii, jj]
                    else:
                        nbr[me, slot] = ghost_of[(me, slot)]
            self.axes = (xs, ys)
            self.mask = mask
            self.pts = lattice[mask.ravel()]
            self.gather = (nbr, g_idx, g_wts)

    def max_slope(self, values: np.ndarray) -> float:
        """Largest neighbor difference quotient of a node array."""
        if self.d == 1:
            return float(np.max(np.abs(np.diff(values)))) / self.h
        nbr = self.gather[0]
        n_act = len(values)
        worst = 0.0
        for s in range(4):
            real = nbr[:, s] < n_act
            if np.any(real):
                worst = max(worst, float(np.max(np.abs(
                    values[real] - values[nbr[real, s]]))))
        return worst / self.h

    def coeff_arrays(self, eps: float, t: float):
        coeffs = self.coeffs
        n = len(self.pts)
        if coeffs.is_constant:
            b = np.broadcast_to(coeffs.constant_b, (n, len(coeffs.constant_b)))
            s = coeffs.constant_sigma
            sst = np.broadcast_to(s @ s.T, (n, s.shape[0], s.shape[0]))
            return b, sst
        b_fun = coeffs.b_eps(eps)
        s_fun = coeffs.sigma_eps(eps)
        b = np.stack([np.atleast_1d(np.asarray(b_fun(t, p), dtype=float))
                      for p in self.pts])
        sst = np.stack([
            (lambda sg: sg @ sg.T)(np.atleast_2d(np.asarray(s_fun(t, p), dtype=float)))
            for p in self.pts])
        return b, sst

    def step(self, v_next: np.ndarray, t_next: float, dt: float, eps: float) -> np.ndarray:
        """One unprojected backward update from the layer at t_next."""
        h = self.h
        b, sst = self.coeff_arrays(eps, t_next)
        if self.d == 1:
            vp = np.empty(len(v_next) + 2)
            vp[1:-1] = v_next
            vp[0] = v_next[1]       # mirror: zero derivative along gamma
            vp[-1] = v_next[-2]
            dplus = (vp[2:] - vp[1:-1]) / h
            dminus = (vp[1:-1] - vp[:-2]) / h
            pbar = 0.5 * (dplus + dminus)
            sstd = sst[:, 0, 0]
            ham = 0.5 * sstd * pbar ** 2 - b[:, 0] * pbar
            # local Lax-Friedrichs: dissipation weighted by |H_p| at the node
            # itself, so a sharp obstacle ramp does not smear the whole grid
            a1 = np.abs(sstd * pbar - b[:, 0]) + 1e-12
            diss = 0.5 * a1 * (dplus - dminus)
            lap = (vp[2:] - 2.0 * vp[1:-1] + vp[:-2]) / (h * h)
            diff = 0.5 * eps * eps * sstd * lap
            center = 1.0 - dt * a1 / h - dt * eps * eps * sstd / (h * h)
            if np.min(center) < -1e-12:
                raise CflError("monotonicity lost: gradient grew beyond the CFL estimate")
            return v_next - dt * (ham - diss - diff)
        nbr, g_idx, g_wts = self.gather
        ghosts = (np.sum(v_next[g_idx] * g_wts, axis=1) if len(g_idx)
                  else np.empty(0))
        ext = np.concatenate([v_next, ghosts])
        vL, vR, vD, vU = (ext[nbr[:, s]] for s in range(4))
        dpx = (vR - v_next) / h
        dmx = (v_next - vL) / h
        dpy = (vU - v_next) / h
        dmy = (v_next - vD) / h
        pbar = np.stack([0.5 * (dpx + dmx), 0.5 * (dpy + dmy)], axis=1)
        sp = np.einsum("nij,nj->ni", sst, pbar)
        ham = 0.5 * np.einsum("ni,ni->n", pbar, sp) - np.einsum("ni,ni->n", b, pbar)
        hp = np.abs(sp - b)
        ax = hp[:, 0] + 1e-12
        ay = hp[:, 1] + 1e-12
        diss = 0.5 * ax * (dpx - dmx) + 0.5 * ay * (dpy - dmy)
        lxx = (vR - 2 * v_next + vL) / (h * h)
        lyy = (vU - 2 * v_next + vD) / (h * h)
        diff = 0.5 * eps * eps * (sst[:, 0, 0] * lxx + sst[:, 1, 1] * lyy)
        center = (1.0 - dt * (ax + ay) / h
                  - dt * eps * eps * (sst[:, 0, 0] + sst[:, 1, 1]) / (h * h))
        if np.min(center) < -1e-12:
            raise CflError("monotonicity lost: gradient grew beyond the CFL estimate")
        return v_next - dt * (ham - diss - diff)


# ---------------------------------------------------------------------------
# Solvers


def _solve_vi(domain: Domain, field: ObliqueField, coeffs: CoefficientField,
              obstacle: Obstacle, vi_type: str, eps: float,
              terminal: Optional[Callable], n_x: Optional[int], t0: float, t_end: float,
              dt: Optional[float], dv_est: Optional[float], cfl_factor: float,
              store_every: Optional[int]) -> ValueGrid:
    if vi_type not in (MIN_TYPE, MAX_TYPE):
        raise ValueError(f"unknown vi_type {vi_type!r}")
    ws = _Workspace(domain, field, coeffs, n_x)
    h = ws.h
    pts = ws.pts

    b0, sst0 = ws.coeff_arrays(eps, t_end)
    max_b = float(np.max(np.linalg.norm(b0, axis=1)))
    max_s2 = float(np.max(np.linalg.norm(sst0, axis=(1, 2))))
    if dv_est is None:
        # the monotone projected scheme keeps gradients near the data's
        # Lipschitz bound; estimate it from the terminal layer and obstacle
        slopes = [ws.max_slope(np.asarray(obstacle(tt, pts), dtype=float).reshape(-1))
                  for tt in np.linspace(t0, t_end, 9)]
        if terminal is not None:
            slopes.append(ws.max_slope(np.asarray(terminal(pts), dtype=float).reshape(-1)))
        dv_est = 1.5 * max(slopes) + 2.0
    adv = max_b + max_s2 * dv_est
    bounds = [h / (adv + h)]
    if eps > 0.0:
        bounds.append(h * h / (eps * eps * max(max_s2, 1e-300) * ws.d))
    # monotonicity needs the advective and diffusive outflow rates bounded
    # jointly, not separately
    bounds.append(1.0 / (ws.d * adv / h + ws.d * eps * eps * max_s2 / (h * h) + 1e-300))
    dt_bound = min(bounds)
    if dt is None:
        dt = cfl_factor * dt_bound
    elif dt > dt_bound:
        raise CflError(f"requested dt={dt:.3e} exceeds the stability bound {dt_bound:.3e}")
    n_t = max(1, int(np.ceil((t_end - t0) / dt)))
    dt = (t_end - t0) / n_t
    if store_every is None:
        store_every = 1 if ws.d == 1 and n_t <= 20000 else max(1, n_t // 400)

    if terminal is None:
        v = np.asarray(obstacle(t_end, pts), dtype=float).reshape(-1)
    else:
        v = np.asarray(terminal(pts), dtype=float).reshape(-1)
    project = np.maximum if vi_type == MIN_TYPE else np.minimum

    times = [t_end]
    stored = [v.copy()]
    t_next = t_end
    for k in range(n_t):
        t_cur = t0 + (n_t - k - 1) * dt
        v_pre = ws.step(v, t_next, dt, eps)
        if not np.all(np.isfinite(v_pre)):
            raise NanError(f"non-finite values at backward step {k} (t = {t_cur:.6g})")
        psi = np.asarray(obstacle(t_cur, pts), dtype=float).reshape(-1)
        v = project(v_pre, psi)
        t_next = t_cur
        if (k + 1) % store_every == 0 or k + 1 == n_t:
            times.append(t_cur)
            stored.append(v.copy())
    order = np.argsort(times)
    return ValueGrid(axes=ws.axes, mask=ws.mask, times=np.asarray(times)[order],
                     layers=np.asarray(stored)[order], h=h, dt=float(dt),
                     vi_type=vi_type, eps=float(eps),
                     meta={"n_t": n_t, "store_every": store_every,
                           "dt_bound": float(dt_bound), "t0": t0, "t_end": t_end})


def solve_limit_vi(domain: Domain, field: ObliqueField, coeffs: CoefficientField,
                   obstacle: Obstacle, vi_type: str = MIN_TYPE,
                   terminal: Optional[Callable] = None, *, n_x: Optional[int] = None,
                   t0: float = 0.0, t_end: float = 1.0, dt: Optional[float] = None,
                   dv_est: Optional[float] = None, cfl_factor: float = 0.9,
                   store_every: Optional[int] = None) -> ValueGrid:
    """First-order obstacle problem (the small-noise limit)."""
    return _solve_vi(domain, field, coeffs, obstacle, vi_type, 0.0, terminal,
                     n_x, t0, t_end, dt, dv_est, cfl_factor, store_every)


def solve_eps_vi(domain: Domain, field: ObliqueField, coeffs: CoefficientField,
                 obstacle: Obstacle, eps: NoiseScale, vi_type: str = MIN_TYPE,
                 terminal: Optional[Callable] = None, *, n_x: Optional[int] = None,
                 t0: float = 0.0, t_end: float = 1.0, dt: Optional[float] = None,
                 dv_est: Optional[float] = None, cfl_factor: float = 0.9,
                 store_every: Optional[int] = None) -> ValueGrid:
    """Second-order obstacle problem at noise level eps (log-transformed form).

    With eps = 0 the diffusion term is multiplied by zero in the same code
    path, reproducing ``solve_limit_vi`` exactly.
    """
    return _solve_vi(domain, field, coeffs, obstacle, vi_type, eps.eps, terminal,
                     n_x, t0, t_end, dt, dv_est, cfl_factor, store_every)


def log_transform(u_grid: ValueGrid, eps: NoiseScale) -> ValueGrid:
    """Pointwise -eps^2 log of a positive value grid."""
    bad = u_grid.layers <= 0.0
    if np.any(bad):
        k, i = np.argwhere(bad)[0]
        raise ValueError(
            f"nonpositive value at t={u_grid.times[k]:.6g}, node {int(i)}: "
            f"{u_grid.layers[k, i]!r}")
    return ValueGrid(axes=u_grid.axes, mask=u_grid.mask, times=u_grid.times.copy(),
                     layers=-(eps.eps ** 2) * np.log(u_grid.layers), h=u_grid.h,
                     dt=u_grid.dt, vi_type=u_grid.vi_type, eps=eps.eps,
                     meta=dict(u_grid.meta, log_transform=True))


# ---------------------------------------------------------------------------
# Complementarity diagnostics


@dataclass(frozen=True)
class ComplementarityReport:
    max_obstacle_violation: float
    max_complementarity_defect: float
    n_transitions_checked: int

    def ok(self, tol: float = 1e-10) -> bool:
        return (self.max_obstacle_violation <= tol
                and self.max_complementarity_defect <= tol)


def residual_scan(domain: Domain, field: ObliqueField, coeffs: CoefficientField,
                  vg: ValueGrid, obstacle: Obstacle) -> ComplementarityReport:
    """Discrete complementarity of a stored solution against its obstacle.

    Recomputes the unprojected update between consecutive stored layers; at
    every node the stored value must coincide with either that update or the
    obstacle (whichever the projection selected), and must sit on the correct
    side of the obstacle.  Only transitions exactly one time step apart are
    checkable, so run the solver with store_every = 1 for a full scan.
    """
    ws = _Workspace(domain, field, coeffs, n_x=len(vg.axes[0]))
    pts = ws.pts
    sign = 1.0 if vg.vi_type == MIN_TYPE else -1.0
    worst_violation = 0.0
    worst_defect = 0.0
    n_checked = 0
    for j in range(len(vg.times) - 1):
        t_cur, t_nxt = float(vg.times[j]), float(vg.times[j + 1])
        if abs((t_nxt - t_cur) - vg.dt) > 1e-9 * max(1.0, vg.dt):
            continue
        v_cur = vg.layers[j]
        psi = np.asarray(obstacle(t_cur, pts), dtype=float).reshape(-1)
        worst_violation = max(worst_violation,
                              float(np.max(-sign * (v_cur - psi), initial=0.0)))
        v_pre = ws.step(vg.layers[j + 1], t_nxt, vg.dt, vg.eps)
        defect = np.minimum(np.abs(v_cur - v_pre), np.abs(v_cur - psi))
        worst_defect = max(worst_defect, float(np.max(defect)))
        n_checked += 1
    return ComplementarityReport(max_obstacle_violation=worst_violation,
                                 max_complementarity_defect=worst_defect,
                                 n_transitions_checked=n_checked)
