"""Small-noise simulation of the reflected diffusion and event Monte Carlo.

The simulator shares the Euler predictor / oblique corrector with the
deterministic solver, adding a Gaussian shock per step.  Noise is drawn from
counter-based streams keyed by (seed, trajectory index), so estimates are
reproducible regardless of chunking or thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .geometry import CoefficientField, Disk, Domain, Interval, ObliqueField
from .reflect import ReferencePath, ReflectedPath, TimeGrid, _euler_reflect, reflect_step


class InfiniteEstimateError(RuntimeError):
    """Raised when a log-probability rate is requested for a zero estimate."""


@dataclass(frozen=True)
class NoiseScale:
    """Noise intensity; zero is allowed and degenerates to the drift ODE."""

    eps: float

    def __post_init__(self):
        if self.eps < 0.0:
            raise ValueError("noise scale must be nonnegative")


@dataclass(frozen=True)
class EventSpec:
    """Path event defined by sup-norm distance to reference trajectories.

    kind "ball": the path stays strictly within radius ``radii[0]`` of the
    single reference at every grid node.  kind "intersection_of_complements":
    for every reference i the path deviates by at least ``radii[i]`` at some
    node.
    """

    kind: str
    references: Sequence[ReferencePath]
    radii: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "references", tuple(self.references))
        object.__setattr__(self, "radii", np.atleast_1d(np.asarray(self.radii, dtype=float)))
        if self.kind not in ("ball", "intersection_of_complements"):
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.kind == "ball" and len(self.references) != 1:
            raise ValueError("ball events take exactly one reference path")
        if len(self.references) != len(self.radii):
            raise ValueError("need one radius per reference")
        if np.any(self.radii <= 0.0):
            raise ValueError("radii must be positive")

    @classmethod
    def ball(cls, reference: ReferencePath, radius: float) -> "EventSpec":
        return cls("ball", [reference], np.array([radius]))

    @classmethod
    def complements(cls, references, radii) -> "EventSpec":
        return cls("intersection_of_complements", list(references), radii)

    def validate_in(self, domain: Domain, tol: float = 1e-8) -> None:
        for ref in self.references:
            sd = domain.signed_distance_many(ref.values)
            if sd.min() < -tol:
                raise ValueError("event reference path leaves the domain closure")


@dataclass(frozen=True)
class McEstimate:
    p_hat: float
    n_samples: int
    ci_half_width: float
    n_hits: int

    @property
    def zero_hit(self) -> bool:
        return self.n_hits == 0


@dataclass(frozen=True)
class LogRateInterval:
    value: float
    lo: float
    hi: float


def trajectory_noise(seed: int, trajectory_id: int, n_steps: int, m: int) -> np.ndarray:
    """Standard normal (n_steps, m) block for one trajectory.

    Row k is a pure function of (seed, trajectory_id, k): the Philox stream is
    keyed by the pair and consumed in step order.
    """
    gen = np.random.Generator(np.random.Philox(key=[seed, trajectory_id]))
    return gen.standard_normal((n_steps, m))


def simulate_reflected_sde(domain: Domain, field: ObliqueField, coeffs: CoefficientField,
                           eps: NoiseScale, t0: float, x, grid: TimeGrid, seed: int,
                           trajectory_id: int = 0) -> ReflectedPath:
    """One reflected Euler trajectory of the noisy dynamics."""
    if abs(grid.t0 - t0) > 1e-12:
        raise ValueError(f"grid starts at {grid.t0}, expected t0 = {t0}")
    x0 = np.atleast_1d(np.asarray(x, dtype=float))
    if domain.signed_distance(x0) < -1e-12:
        raise ValueError(f"start point {x0} lies outside the closure")
    xi = trajectory_noise(seed, trajectory_id, grid.n_steps, coeffs.m)
    b_fun = coeffs.b_eps(eps.eps)
    s_fun = coeffs.sigma_eps(eps.eps)
    nodes = grid.nodes
    sqdt = np.sqrt(grid.dts)

    def drift_at(k, xk):
        return np.atleast_1d(np.asarray(b_fun(nodes[k], xk), dtype=float))

    def shock_at(k, xk):
        sig = np.atleast_2d(np.asarray(s_fun(nodes[k], xk), dtype=float))
        return eps.eps * sqdt[k] * (sig @ xi[k])

    pts, incs, flags = _euler_reflect(domain, field, x0, grid, drift_at, shock_at)
    return ReflectedPath(grid=grid, points=pts, reflection_increments=incs,
                         boundary_flags=flags)


def event_hit(path: ReflectedPath, event: EventSpec) -> bool:
    """Sup-norm membership of a path in the event, tested at grid nodes."""
    devs = []
    for ref in event.references:
        g = ref.at(path.grid.nodes)
        devs.append(np.max(np.linalg.norm(path.points - g, axis=1)))
    devs = np.array(devs)
    if event.kind == "ball":
        return bool(devs[0] < event.radii[0])
    return bool(np.all(devs >= event.radii))


# ---------------------------------------------------------------------------
# Batched Monte Carlo


def _batch_reflect(domain: Domain, field: ObliqueField, p: np.ndarray) -> np.ndarray:
    """Push every exterior row of ``p`` back into the closure."""
    if isinstance(domain, Interval):
        # 1-d pushback lands on the violated endpoint for any admissible field.
        return np.clip(p, domain.a, domain.b)
    if isinstance(domain, Disk) and field.kind == "normal":
        rel = p - domain.center
        rad = np.linalg.norm(rel, axis=1)
        out = rad > domain.radius
        if np.any(out):
            p = p.copy()
            p[out] = domain.center + rel[out] * (domain.radius / rad[out])[:, None]
        return p
    sd = domain.signed_distance_many(p)
    bad = np.nonzero(sd < 0.0)[0]
    if len(bad) == 0:
        return p
    p = p.copy()
    for i in bad:
        q, _ = reflect_step(domain, field, p[i])
        p[i] = q
    return p


def _batch_step(domain, field, coeffs, eps, grid, x0, seed, ids,
                event: Optional[EventSpec] = None):
    """Step one trajectory block (constant coefficients only).

    Returns the terminal states (B, d) and, when an event is given, the
    per-trajectory running max deviation from each reference (B, n_refs).
    """
    n = grid.n_steps
    blocks = [trajectory_noise(seed, int(tid), n, coeffs.m) for tid in ids]
    xi = np.stack(blocks)  # (B, n, m)
    shocks = xi @ coeffs.constant_sigma.T  # (B, n, d)
    X = np.repeat(x0[None, :], len(ids), axis=0)
    g_nodes = [ref.at(grid.nodes) for ref in event.references] if event else []
    max_dev = (np.stack([np.linalg.norm(X - g[0], axis=1) for g in g_nodes], axis=1)
               if g_nodes else None)
    dts = grid.dts
    sq = np.sqrt(dts)
    for k in range(n):
        P = X + coeffs.constant_b * dts[k] + (eps.eps * sq[k]) * shocks[:, k, :]
        X = _batch_reflect(domain, field, P)
        for i, g in enumerate(g_nodes):
            np.maximum(max_dev[:, i], np.linalg.norm(X - g[k + 1], axis=1), out=max_dev[:, i])
    return X, max_dev


def _chunk_hits(domain, field, coeffs, eps, grid, x0, event, seed, ids) -> int:
    """Simulate one trajectory block and count event hits (constant coeffs)."""
    _, max_dev = _batch_step(domain, field, coeffs, eps, grid, x0, seed, ids, event)
    if event.kind == "ball":
        hits = max_dev[:, 0] < event.radii[0]
    else:
        hits = np.all(max_dev >= event.radii[None, :], axis=1)
    return int(hits.sum())


def sample_terminal_values(domain: Domain, field: ObliqueField, coeffs: CoefficientField,
                           eps: NoiseScale, t0: float, x, grid: TimeGrid,
                           n_samples: int, seed: int, chunk_size: int = 4096) -> np.ndarray:
    """Terminal states of ``n_samples`` independent trajectories."""
    if abs(grid.t0 - t0) > 1e-12:
        raise ValueError(f"grid starts at {grid.t0}, expected t0 = {t0}")
    x0 = np.atleast_1d(np.asarray(x, dtype=float))
    chunks = np.array_split(np.arange(n_samples), max(1, -(-n_samples // chunk_size)))
    outs = []
    for ids in chunks:
        if coeffs.is_constant:
            X, _ = _batch_step(domain, field, coeffs, eps, grid, x0, seed, ids)
        else:
            X = np.stack([
                simulate_reflected_sde(domain, field, coeffs, eps, t0, x0, grid, seed,
                                       trajectory_id=int(tid)).points[-1]
                for tid in ids])
        outs.append(X)
    return np.vstack(outs)


def estimate_event_probability(domain: Domain, field: ObliqueField, coeffs: CoefficientField,
                               eps: NoiseScale, t0: float, x, grid: TimeGrid,
                               event: EventSpec, n_samples: int, seed: int,
                               chunk_size: int = 4096, n_threads: int = 1) -> McEstimate:
    """Crude Monte Carlo probability of the path event.

    Trajectory i always consumes the stream keyed (seed, i), so the estimate
    is a pure function of (seed, config) independent of chunking or threads.
    """
    if n_samples < 100:
        raise ValueError("need at least 100 samples")
    x0 = np.atleast_1d(np.asarray(x, dtype=float))
    event.validate_in(domain)
    id_chunks = np.array_split(np.arange(n_samples), max(1, -(-n_samples // chunk_size)))

    if coeffs.is_constant:
        def work(ids):
            return _chunk_hits(domain, field, coeffs, eps, grid, x0, event, seed, ids)
    else:
        def work(ids):
            c = 0
            for tid in ids:
                path = simulate_reflected_sde(domain, field, coeffs, eps, t0, x0, grid,
                                              seed, trajectory_id=int(tid))
                c += int(event_hit(path, event))
            return c

    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            counts = list(pool.map(work, id_chunks))
    else:
        counts = [work(ids) for ids in id_chunks]
    n_hits = int(sum(counts))
    p_hat = n_hits / n_samples
    ci = 1.96 * np.sqrt(p_hat * (1.0 - p_hat) / n_samples)
    return McEstimate(p_hat=p_hat, n_samples=n_samples, ci_half_width=float(ci),
                      n_hits=n_hits)


def log_rate_estimate(est: McEstimate, eps: NoiseScale) -> LogRateInterval:
    """-eps^2 log of the estimate, with the CI pushed through the transform."""
    if est.p_hat <= 0.0:
        raise InfiniteEstimateError("zero-hit estimate has no finite log rate")
    e2 = eps.eps ** 2
    value = -e2 * np.log(est.p_hat)
    hi_p = min(est.p_hat + est.ci_half_width, 1.0)
    lo_p = est.p_hat - est.ci_half_width
    lo = -e2 * np.log(hi_p)
    hi = -e2 * np.log(lo_p) if lo_p > 0.0 else np.inf
    return LogRateInterval(value=float(value), lo=float(lo), hi=float(hi))
