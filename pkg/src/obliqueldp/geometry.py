"""Bounded smooth domains, signed distances, and oblique boundary fields.

A domain is the open region where a scalar level function is negative; the
signed distance convention used throughout the package is positive inside
the domain and negative outside.  Dimensions 1 and 2 are supported.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.stats import qmc


class GeometryError(RuntimeError):
    """Base class for geometry failures."""


class DegenerateGeometryError(GeometryError):
    """Raised when a level-set gradient vanishes where a normal is needed."""


class ProjectionError(GeometryError):
    """Raised when boundary projection fails to converge."""


class ObliqueConditionError(GeometryError):
    """Raised when an oblique field fails the uniform interior-cone condition."""



def _sobol_points(d: int, n: int, skip: int = 0) -> np.ndarray:
    """First ``n`` unscrambled Sobol points in [0,1)^d (after ``skip``)."""
    sob = qmc.Sobol(d=d, scramble=False)
    total = skip + n
    m = max(1, int(np.ceil(np.log2(max(total, 2)))))
    pts = sob.random_base2(m)
    return pts[skip:skip + n]

def _as_point(x, dimension: int) -> np.ndarray:
    p = np.atleast_1d(np.asarray(x, dtype=float))
    if p.shape != (dimension,):
        raise ValueError(f"expected point of shape ({dimension},), got {p.shape}")
    return p


class Domain:
    """Bounded domain described by a smooth level function.

    Parameters
    ----------
    level : callable
        Scalar function, negative inside the domain, zero on the boundary,
        positive outside.  Must be smooth near the boundary.
    bounding_box : array_like, shape (d, 2)
        Axis-aligned box containing the closure of the domain.
    grad_level : callable, optional
        Gradient of ``level``.  Central differences are used when omitted.
    """

    kind = "custom-level-set"

    def __init__(self, level: Callable, bounding_box, grad_level: Optional[Callable] = None,
                 fd_step: float = 1e-7):
        self.level_function = level
        self.bounding_box = np.asarray(bounding_box, dtype=float).reshape(-1, 2)
        self.dimension = self.bounding_box.shape[0]
        if self.dimension not in (1, 2):
            raise ValueError("only dimensions 1 and 2 are supported")
        self._fd_step = fd_step
        self._grad = grad_level

    # -- level set ---------------------------------------------------------

    def level(self, x) -> float:
        return float(self.level_function(_as_point(x, self.dimension)))

    def grad_level(self, x) -> np.ndarray:
        p = _as_point(x, self.dimension)
        if self._grad is not None:
            return np.asarray(self._grad(p), dtype=float)
        h = self._fd_step
        g = np.empty(self.dimension)
        for j in range(self.dimension):
            e = np.zeros(self.dimension)
            e[j] = h
            g[j] = (self.level_function(p + e) - self.level_function(p - e)) / (2.0 * h)
        return g

    # -- core operations ---------------------------------------------------

    def project_to_boundary(self, x, tol: float = 1e-10, max_iter: int = 100) -> np.ndarray:
        """Closest boundary point (first Newton basin reached from ``x``).

        Alternates a Newton step onto the level set with a tangential slide
        toward ``x``; the result satisfies ``|level| <= tol``.
        """
        p = _as_point(x, self.dimension)
        if np.linalg.norm(self.grad_level(p)) < 1e-12:
            # Center of symmetry: race axis and diagonal rays, keep the closest.
            dirs = [np.eye(self.dimension)[j] * s for j in range(self.dimension)
                    for s in (1.0, -1.0)]
            dirs.append(np.ones(self.dimension) / np.sqrt(self.dimension))
            best, best_d = None, np.inf
            for u in dirs:
                try:
                    q = self._slide_to_closest(p, self._reach_boundary(p, tol, direction=u),
                                               tol, max_iter)
                except GeometryError:
                    continue
                d = float(np.linalg.norm(p - q))
                if d < best_d:
                    best, best_d = q, d
            if best is None:
                raise ProjectionError(f"projection failed from degenerate point {p}")
            return best
        return self._slide_to_closest(p, self._reach_boundary(p.copy(), tol), tol, max_iter)

    def _slide_to_closest(self, p: np.ndarray, y: np.ndarray, tol: float,
                          max_iter: int) -> np.ndarray:
        damp = 1.0
        probes_left = 3
        scale = float(np.max(self.bounding_box[:, 1] - self.bounding_box[:, 0]))
        for _ in range(max_iter):
            # Slide tangentially toward the query point, then re-project onto
            # the level set; damp the slide if the distance stops improving.
            g = self.grad_level(y)
            gn = g / np.linalg.norm(g)
            r = p - y
            t_step = r - (r @ gn) * gn
            base = float(np.linalg.norm(r))
            stalled = False
            if np.linalg.norm(t_step) <= tol:
                stalled = True
            else:
                accepted = False
                for _ in range(40):
                    cand = self._reach_boundary(y + damp * t_step, tol)
                    if np.linalg.norm(p - cand) <= base + 1e-15:
                        improvement = base - float(np.linalg.norm(p - cand))
                        y = cand
                        damp = min(1.0, 1.5 * damp)
                        accepted = True
                        break
                    damp *= 0.5
                if not accepted or improvement < 1e-14 * max(base, 1.0):
                    stalled = True
            if stalled:
                # A stationary point of the boundary distance is not always the
                # minimum (it can be a ridge point); probe tangentially.
                if probes_left > 0 and self.dimension == 2:
                    probes_left -= 1
                    tang = np.array([-gn[1], gn[0]])
                    moved = False
                    for sgn_dir in (1.0, -1.0):
                        probe = self._reach_boundary(y + sgn_dir * 1e-3 * scale * tang, tol)
                        if np.linalg.norm(p - probe) < base - 1e-12:
                            y = probe
                            moved = True
                            break
                    if moved:
                        continue
                break
        if abs(self.level(y)) > tol:
            raise ProjectionError(f"projection residual too large at {y}")
        return y

    def _reach_boundary(self, y: np.ndarray, tol: float, direction=None) -> np.ndarray:
        """March along the level gradient to the zero set (bracket + bisect)."""
        from scipy.optimize import brentq

        f0 = self.level(y)
        if abs(f0) <= tol:
            return y
        scale = float(np.max(self.bounding_box[:, 1] - self.bounding_box[:, 0]))
        if direction is not None:
            u = np.asarray(direction, dtype=float)
        else:
            g = self.grad_level(y)
            gn = float(np.linalg.norm(g))
            if gn < 1e-12:
                # Critical point (e.g. a center of symmetry): fixed fallback ray.
                u = np.ones(self.dimension) / np.sqrt(self.dimension)
            else:
                u = g / gn
        # level decreases inward; march toward increasing level when inside.
        if f0 > 0.0:
            u = -u
        step = 1e-3 * scale
        s_lo, s_hi = 0.0, step
        for _ in range(60):
            if f0 * self.level(y + s_hi * u) <= 0.0:
                break
            s_lo, s_hi = s_hi, s_hi * 1.9
            if s_hi > 8.0 * scale:
                raise ProjectionError(f"could not bracket the boundary from {y}")
        else:
            raise ProjectionError(f"could not bracket the boundary from {y}")
        s = brentq(lambda t: self.level(y + t * u), s_lo, s_hi, xtol=1e-15, rtol=8.9e-16)
        q = y + s * u
        if abs(self.level(q)) > tol:
            raise ProjectionError(f"boundary residual too large at {q}")
        return q

    def signed_distance(self, x) -> float:
        """Distance to the boundary, positive inside the domain."""
        p = _as_point(x, self.dimension)
        q = self.project_to_boundary(p)
        d = float(np.linalg.norm(p - q))
        return d if self.level(p) <= 0.0 else -d

    def signed_distance_many(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.array([self.signed_distance(row) for row in X])

    def normal(self, x) -> np.ndarray:
        """Outward unit normal (unit length to 1e-12), from the level gradient."""
        g = self.grad_level(_as_point(x, self.dimension))
        n = np.linalg.norm(g)
        if n < 1e-9:
            raise DegenerateGeometryError(f"vanishing level gradient at {x}")
        return g / n

    def project_to_boundary_many(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.array([self.project_to_boundary(row) for row in X])

    def normal_many(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.array([self.normal(row) for row in X])

    def contains(self, x, tol: float = 0.0) -> bool:
        return self.signed_distance(x) >= -tol

    def interior_radius(self) -> float:
        """Maximum of the signed distance over the closure (sup-norm of d)."""
        pts = self.sample_closure(2048)
        return float(max(self.signed_distance(p) for p in pts))

    # -- sampling ----------------------------------------------------------

    def boundary_points(self, n: int) -> np.ndarray:
        """Quasi-uniform boundary sample of size ``n``."""
        raw = _sobol_points(self.dimension, 4 * n)
        lo, hi = self.bounding_box[:, 0], self.bounding_box[:, 1]
        pts = []
        for u in raw:
            p = lo + u[: self.dimension] * (hi - lo)
            try:
                q = self.project_to_boundary(p)
            except GeometryError:
                continue
            pts.append(q)
            if len(pts) >= n:
                break
        if len(pts) < n:
            raise ProjectionError("could not assemble boundary sample")
        return np.array(pts)

    def sample_closure(self, n: int) -> np.ndarray:
        """Quasi-uniform sample of the closure (low-discrepancy + rejection)."""
        lo, hi = self.bounding_box[:, 0], self.bounding_box[:, 1]
        pts = []
        skip, block = 0, max(2 * n, 64)
        for _ in range(64):
            raw = _sobol_points(self.dimension, block, skip=skip)
            skip += block
            for u in raw:
                p = lo + u * (hi - lo)
                if self.level(p) <= 0.0:
                    pts.append(p)
                    if len(pts) >= n:
                        return np.array(pts)
        raise GeometryError("closure sampling failed; is the domain empty?")


class Interval(Domain):
    """Open interval (a, b) on the line."""

    kind = "interval"

    def __init__(self, a: float, b: float):
        if not b > a:
            raise ValueError("interval requires a < b")
        self.a = float(a)
        self.b = float(b)
        super().__init__(self._level, [[a, b]])

    def _level(self, x):
        x0 = float(np.atleast_1d(x)[0])
        return -min(x0 - self.a, self.b - x0)

    def grad_level(self, x):
        x0 = float(_as_point(x, 1)[0])
        return np.array([-1.0]) if (x0 - self.a) < (self.b - x0) else np.array([1.0])

    def signed_distance(self, x) -> float:
        x0 = float(_as_point(x, 1)[0])
        return min(x0 - self.a, self.b - x0)

    def signed_distance_many(self, X) -> np.ndarray:
        x = np.atleast_2d(np.asarray(X, dtype=float))[:, 0]
        return np.minimum(x - self.a, self.b - x)

    def project_to_boundary(self, x, tol: float = 1e-10, max_iter: int = 100) -> np.ndarray:
        x0 = float(_as_point(x, 1)[0])
        return np.array([self.a]) if (x0 - self.a) < (self.b - x0) else np.array([self.b])

    def project_to_boundary_many(self, X) -> np.ndarray:
        x = np.atleast_2d(np.asarray(X, dtype=float))[:, 0]
        return np.where(x - self.a < self.b - x, self.a, self.b).reshape(-1, 1)

    def normal_many(self, X) -> np.ndarray:
        x = np.atleast_2d(np.asarray(X, dtype=float))[:, 0]
        return np.where(x - self.a < self.b - x, -1.0, 1.0).reshape(-1, 1)

    def boundary_points(self, n: int) -> np.ndarray:
        ends = np.array([[self.a], [self.b]])
        return ends[np.arange(n) % 2]

    def sample_closure(self, n: int) -> np.ndarray:
        u = _sobol_points(1, n)[:, 0]
        return (self.a + u * (self.b - self.a)).reshape(-1, 1)

    def interior_radius(self) -> float:
        return 0.5 * (self.b - self.a)


class Disk(Domain):
    """Open disk of given radius and center in the plane."""

    kind = "disk"

    def __init__(self, radius: float = 1.0, center=(0.0, 0.0)):
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.radius = float(radius)
        self.center = np.asarray(center, dtype=float)
        bb = np.stack([self.center - radius, self.center + radius], axis=1)
        super().__init__(self._level, bb)

    def _level(self, x):
        return float(np.linalg.norm(np.asarray(x, dtype=float) - self.center) - self.radius)

    def grad_level(self, x):
        r = _as_point(x, 2) - self.center
        nr = np.linalg.norm(r)
        if nr < 1e-12:
            raise DegenerateGeometryError("level gradient undefined at the disk center")
        return r / nr

    def signed_distance(self, x) -> float:
        return self.radius - float(np.linalg.norm(_as_point(x, 2) - self.center))

    def signed_distance_many(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.radius - np.linalg.norm(X - self.center, axis=1)

    def project_to_boundary(self, x, tol: float = 1e-10, max_iter: int = 100) -> np.ndarray:
        r = _as_point(x, 2) - self.center
        nr = np.linalg.norm(r)
        if nr < 1e-12:
            # Any boundary point is closest; pick a fixed one for determinism.
            return self.center + np.array([self.radius, 0.0])
        return self.center + (self.radius / nr) * r

    def project_to_boundary_many(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        rel = X - self.center
        nr = np.linalg.norm(rel, axis=1, keepdims=True)
        unit = np.where(nr < 1e-12, np.array([1.0, 0.0]), rel / np.maximum(nr, 1e-12))
        return self.center + self.radius * unit

    def normal_many(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        rel = X - self.center
        nr = np.linalg.norm(rel, axis=1, keepdims=True)
        if np.any(nr < 1e-12):
            raise DegenerateGeometryError("normal undefined at the disk center")
        return rel / nr

    def boundary_points(self, n: int) -> np.ndarray:
        th = 2.0 * np.pi * (np.arange(n) + 0.5) / n
        return self.center + self.radius * np.stack([np.cos(th), np.sin(th)], axis=1)

    def sample_closure(self, n: int) -> np.ndarray:
        u = _sobol_points(2, n)
        r = self.radius * np.sqrt(u[:, 0])
        th = 2.0 * np.pi * u[:, 1]
        return self.center + np.stack([r * np.cos(th), r * np.sin(th)], axis=1)

    def interior_radius(self) -> float:
        return self.radius


class Ellipse(Domain):
    """Open axis-aligned ellipse with semi-axes (a, b)."""

    kind = "ellipse"

    def __init__(self, a: float, b: float, center=(0.0, 0.0)):
        if a <= 0 or b <= 0:
            raise ValueError("semi-axes must be positive")
        self.semi_axes = np.array([float(a), float(b)])
        self.center = np.asarray(center, dtype=float)
        bb = np.stack([self.center - self.semi_axes, self.center + self.semi_axes], axis=1)
        super().__init__(self._level, bb, grad_level=self._grad_level_fn)
        # Dense parameter scan used to seed Newton refinement of projections.
        self._scan_theta = np.linspace(0.0, 2.0 * np.pi, 720, endpoint=False)

    def _level(self, x):
        z = (np.asarray(x, dtype=float) - self.center) / self.semi_axes
        return float(z @ z - 1.0)

    def _grad_level_fn(self, x):
        z = (np.asarray(x, dtype=float) - self.center) / self.semi_axes
        return 2.0 * z / self.semi_axes

    def _closest_angle(self, p: np.ndarray) -> float:
        """Parameter of the closest boundary point to ``p`` (centered coords)."""
        a, b = self.semi_axes
        th = self._scan_theta
        d2 = (a * np.cos(th) - p[0]) ** 2 + (b * np.sin(th) - p[1]) ** 2
        t = th[int(np.argmin(d2))]
        # Newton on f(t) = (b^2-a^2) sin t cos t + a x sin t - b y cos t = 0.
        for _ in range(60):
            s, c = np.sin(t), np.cos(t)
            f = (b * b - a * a) * s * c + a * p[0] * s - b * p[1] * c
            fp = (b * b - a * a) * (c * c - s * s) + a * p[0] * c + b * p[1] * s
            if abs(fp) < 1e-14:
                break
            step = f / fp
            t -= step
            if abs(step) < 1e-15:
                break
        return t

    def project_to_boundary(self, x, tol: float = 1e-10, max_iter: int = 100) -> np.ndarray:
        p = _as_point(x, 2) - self.center
        if np.linalg.norm(p) < 1e-12:
            j = int(np.argmin(self.semi_axes))
            q = np.zeros(2)
            q[j] = self.semi_axes[j]
            return self.center + q
        t = self._closest_angle(p)
        q = np.array([self.semi_axes[0] * np.cos(t), self.semi_axes[1] * np.sin(t)])
        return self.center + q

    def signed_distance(self, x) -> float:
        p = _as_point(x, 2)
        q = self.project_to_boundary(p)
        d = float(np.linalg.norm(p - q))
        return d if self._level(p) <= 0.0 else -d

    def signed_distance_many(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.array([self.signed_distance(row) for row in X])

    def boundary_points(self, n: int) -> np.ndarray:
        # Arc-length-balanced parameter sample: equal steps in an angle
        # variable reweighted by the local speed.
        th = np.linspace(0.0, 2.0 * np.pi, 8 * n)
        a, b = self.semi_axes
        speed = np.sqrt((a * np.sin(th)) ** 2 + (b * np.cos(th)) ** 2)
        arc = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(th))])
        targets = arc[-1] * (np.arange(n) + 0.5) / n
        ts = np.interp(targets, arc, th)
        return self.center + np.stack([a * np.cos(ts), b * np.sin(ts)], axis=1)

    def sample_closure(self, n: int) -> np.ndarray:
        u = _sobol_points(2, n)
        r = np.sqrt(u[:, 0])
        th = 2.0 * np.pi * u[:, 1]
        a, b = self.semi_axes
        return self.center + np.stack([a * r * np.cos(th), b * r * np.sin(th)], axis=1)

    def interior_radius(self) -> float:
        return float(np.min(self.semi_axes))


# ---------------------------------------------------------------------------
# Oblique boundary fields


@dataclass(frozen=True)
class ObliqueField:
    """Lipschitz direction field along which reflection pushes at the boundary.

    ``c0`` is a certified lower bound on gamma . n over sampled boundary
    points; ``lipschitz_bound`` is the declared (or estimated) Lipschitz
    constant of the field.
    """

    gamma: Callable[[np.ndarray], np.ndarray]
    lipschitz_bound: float
    c0: float
    kind: str = "custom"
    params: tuple = ()

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.gamma(np.asarray(x, dtype=float)), dtype=float)

    def param(self, name: str):
        return dict(self.params).get(name)

    def gamma_many(self, domain: "Domain", Q) -> np.ndarray:
        """Evaluate the field on an array of boundary points.

        Known field kinds take a vectorized path; anything else falls back
        to a row loop over the scalar callable.
        """
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        if self.kind == "normal":
            return domain.normal_many(Q)
        if self.kind == "oblique-tangent" and self.param("kappa") is not None:
            n = domain.normal_many(Q)
            t = np.stack([-n[:, 1], n[:, 0]], axis=1)
            return n + float(self.param("kappa")) * t
        if self.kind == "constant" and self.param("vector") is not None:
            v = np.asarray(self.param("vector"), dtype=float)
            return np.broadcast_to(v, Q.shape).copy()
        return np.array([self(q) for q in Q])


@dataclass(frozen=True)
class ObliqueReport:
    min_dot: float
    lipschitz_est: float
    n_samples: int


def validate_oblique(domain: Domain, gamma: Callable, n_samples: int = 4096) -> ObliqueReport:
    """Check gamma . n > 0 over a quasi-uniform boundary sample.

    Raises ObliqueConditionError when the sampled minimum is nonpositive.
    """
    pts = domain.boundary_points(n_samples)
    dots = np.empty(len(pts))
    gs = np.empty_like(pts)
    for i, p in enumerate(pts):
        g = np.asarray(gamma(p), dtype=float)
        gs[i] = g
        dots[i] = float(g @ domain.normal(p))
    min_dot = float(dots.min())
    if min_dot <= 0.0:
        worst = pts[int(np.argmin(dots))]
        raise ObliqueConditionError(
            f"oblique condition fails: gamma.n = {min_dot:.3e} at boundary point {worst}")
    # Lipschitz estimate over consecutive and strided sample pairs.
    lip = 0.0
    n = len(pts)
    for stride in (1, 7, 61):
        q = np.roll(pts, -stride, axis=0)
        gq = np.roll(gs, -stride, axis=0)
        dx = np.linalg.norm(pts - q, axis=1)
        dg = np.linalg.norm(gs - gq, axis=1)
        ok = dx > 1e-12
        if ok.any():
            lip = max(lip, float((dg[ok] / dx[ok]).max()))
    return ObliqueReport(min_dot=min_dot, lipschitz_est=lip, n_samples=n_samples)


def normal_field(domain: Domain, n_certify: int = 512) -> ObliqueField:
    """Reflection along the outward normal (extended off the boundary by projection)."""

    def gamma(x):
        q = domain.project_to_boundary(x)
        return domain.normal(q)

    rep = validate_oblique(domain, gamma, n_certify)
    return ObliqueField(gamma=gamma, lipschitz_bound=rep.lipschitz_est, c0=rep.min_dot, kind="normal")


def oblique_from_tangent(domain: Domain, kappa: float, n_certify: int = 512) -> ObliqueField:
    """Normal plus ``kappa`` times the (counterclockwise) tangent; 2-d only."""
    if domain.dimension != 2:
        raise ValueError("tangential tilt requires a planar domain")

    def gamma(x):
        q = domain.project_to_boundary(x)
        n = domain.normal(q)
        t = np.array([-n[1], n[0]])
        return n + kappa * t

    rep = validate_oblique(domain, gamma, n_certify)
    return ObliqueField(gamma=gamma, lipschitz_bound=rep.lipschitz_est, c0=rep.min_dot,
                        kind="oblique-tangent", params=(("kappa", float(kappa)),))


def constant_field(vector, domain: Domain, n_certify: int = 512) -> ObliqueField:
    """Constant direction field; validated against the domain before use."""
    v = np.asarray(vector, dtype=float)

    def gamma(x):
        return v

    rep = validate_oblique(domain, gamma, n_certify)
    return ObliqueField(gamma=gamma, lipschitz_bound=0.0, c0=rep.min_dot,
                        kind="constant", params=(("vector", tuple(float(c) for c in v)),))


# ---------------------------------------------------------------------------
# Drift / diffusion coefficient pairs


@dataclass(frozen=True)
class EpsFamily:
    """Noise-indexed coefficient perturbations converging to the base pair."""

    b_of: Callable[[float], Callable]
    sigma_of: Callable[[float], Callable]


@dataclass(frozen=True)
class CoefficientField:
    """Drift ``b(t, x)`` (d-vector) and diffusion ``sigma(t, x)`` (d x m).

    When the coefficients are literal constants they are also stored as
    arrays (``constant_b``, ``constant_sigma``) so batch simulators can step
    whole trajectory blocks at once.
    """

    b: Callable[[float, np.ndarray], np.ndarray]
    sigma: Callable[[float, np.ndarray], np.ndarray]
    m: int
    lipschitz_x: float
    eps_family: Optional[EpsFamily] = None
    constant_b: Optional[np.ndarray] = None
    constant_sigma: Optional[np.ndarray] = None

    @property
    def is_constant(self) -> bool:
        return (self.constant_b is not None and self.constant_sigma is not None
                and self.eps_family is None)

    def b_eps(self, eps: float) -> Callable:
        if self.eps_family is None:
            return self.b
        return self.eps_family.b_of(eps)

    def sigma_eps(self, eps: float) -> Callable:
        if self.eps_family is None:
            return self.sigma
        return self.eps_family.sigma_of(eps)


def constant_coefficients(b_vec, sigma_mat, lipschitz_x: float = 0.0) -> CoefficientField:
    b_arr = np.atleast_1d(np.asarray(b_vec, dtype=float))
    s_arr = np.atleast_2d(np.asarray(sigma_mat, dtype=float))
    return CoefficientField(
        b=lambda t, x: b_arr,
        sigma=lambda t, x: s_arr,
        m=s_arr.shape[1],
        lipschitz_x=lipschitz_x,
        constant_b=b_arr,
        constant_sigma=s_arr,
    )


@dataclass(frozen=True)
class CoefficientReport:
    lipschitz_quotient: float
    eps_sup_deviations: Optional[np.ndarray]
    n_samples: int


def validate_coefficients(coeffs: CoefficientField, domain: Domain, t_max: float = 1.0,
                          n_samples: int = 256, eps_ladder=None, seed: int = 0) -> CoefficientReport:
    """Sampled Lipschitz check plus eps-family uniform-convergence check."""
    rng = np.random.default_rng(seed)
    pts = domain.sample_closure(n_samples)
    ts = rng.uniform(0.0, t_max, size=n_samples)
    quot = 0.0
    for i in range(n_samples - 1):
        x, y = pts[i], pts[i + 1]
        dx = float(np.linalg.norm(x - y))
        if dx < 1e-12:
            continue
        t = float(ts[i])
        db = np.linalg.norm(np.asarray(coeffs.b(t, x)) - np.asarray(coeffs.b(t, y)))
        ds = np.linalg.norm(np.asarray(coeffs.sigma(t, x)) - np.asarray(coeffs.sigma(t, y)))
        quot = max(quot, float(db / dx), float(ds / dx))
    if quot > coeffs.lipschitz_x * (1.0 + 1e-6) + 1e-12:
        raise ValueError(
            f"sampled Lipschitz quotient {quot:.6g} exceeds declared bound {coeffs.lipschitz_x:.6g}")
    devs = None
    if eps_ladder is not None and coeffs.eps_family is not None:
        devs = []
        for eps in eps_ladder:
            be, se = coeffs.b_eps(eps), coeffs.sigma_eps(eps)
            sup = 0.0
            for i in range(n_samples):
                t, x = float(ts[i]), pts[i]
                sup = max(sup,
                          float(np.linalg.norm(np.asarray(be(t, x)) - np.asarray(coeffs.b(t, x)))),
                          float(np.linalg.norm(np.asarray(se(t, x)) - np.asarray(coeffs.sigma(t, x)))))
            devs.append(sup)
        devs = np.array(devs)
        if np.any(np.diff(devs) > 1e-12):
            raise ValueError("eps-family deviations must be nonincreasing along the ladder")
    return CoefficientReport(lipschitz_quotient=quot, eps_sup_deviations=devs,
                             n_samples=n_samples)
