"""Desk-scale consistency experiments for the small-noise decay rates.

Each experiment pits three independent computations against each other:
Monte Carlo log-probabilities of a path event, the least-action value from
the deterministic control problem, and a dynamic-programming or PDE value.
Verdicts come with an itemized error budget so a failed comparison is
attributable to statistics, discretization, or genuine disagreement.
"""

import csv
import json
import math
from dataclasses import dataclass, field as dataclass_field
from typing import Callable, Optional, Sequence

import numpy as np

from .geometry import CoefficientField, Domain, ObliqueField
from .reflect import Control, ReferencePath, TimeGrid, holder_half_quotient, solve_reflected_ode
from .sde import (EventSpec, LogRateInterval, McEstimate, NoiseScale,
                  estimate_event_probability, log_rate_estimate)
from .rate import rate_of_event, weak_stability_check
from .control_stop import DiscreteProblem, reduced_value, tube_indicator_obstacle
from .hjbvi import MIN_TYPE, solve_eps_vi, solve_limit_vi, tube_obstacle

CONSISTENT = "consistent"
INCONSISTENT = "inconsistent"
INCONCLUSIVE = "inconclusive"


@dataclass
class LdpConfig:
    """Everything one experiment needs, in one place.

    references/radii define the tube(s): a single tube for ball events, one
    or more for intersection-of-complements events.  obstacle_height is the
    cap A used by the PDE/DP obstacles; it should exceed the expected rate.
    """

    domain: Domain
    field: ObliqueField
    coeffs: CoefficientField
    t0: float
    x0: Sequence[float]
    t_end: float
    references: Sequence[ReferencePath]
    radii: Sequence[float]
    eps_ladder: Sequence[float]
    n_samples: int = 20000
    n_steps: int = 256
    seed: int = 20240801
    obstacle_height: float = 1.0
    scheme_tol: float = 0.02
    lambda_fraction: float = 0.15
    n_x: int = 200
    rate_tol: float = 1e-3
    rate_segments: int = 64
    rate_max_segments: int = 256
    dp_n_steps: int = 4
    dp_controls: Sequence[float] = (0.0, 0.25, -0.25, 0.5, -0.5, 1.0, -1.0)
    dp_substeps: int = 16
    cap_heights: Sequence[float] = (0.05, 1.0)
    cap_reference_height: float = 2.0
    cap_tol_rel: float = 0.10
    goodness_action_bound: float = 1.0
    goodness_n_controls: int = 12
    goodness_n_max: int = 64
    chunk_size: int = 4096
    n_threads: int = 1

    def __post_init__(self):
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        self.references = list(self.references)
        self.radii = [float(r) for r in self.radii]
        self.eps_ladder = [float(e) for e in self.eps_ladder]
        if len(self.references) != len(self.radii):
            raise ValueError("references and radii must pair up")
        if sorted(self.eps_ladder, reverse=True) != self.eps_ladder:
            raise ValueError("eps_ladder must be strictly decreasing")
        if len(set(self.eps_ladder)) != len(self.eps_ladder):
            raise ValueError("eps_ladder must be strictly decreasing")

    @property
    def mc_grid(self) -> TimeGrid:
        return TimeGrid.uniform(self.t0, self.t_end, self.n_steps)

    def cell_width(self) -> float:
        box = self.domain.bounding_box
        return float(box[0, 1] - box[0, 0]) / (self.n_x - 1)


@dataclass
class LdpReport:
    eps_ladder: list
    log_rates: list          # LogRateInterval or None per eps
    lambda_value: float
    dp_value: Optional[float]
    verdict: str
    details: dict

    def to_dict(self) -> dict:
        rates = []
        for lr in self.log_rates:
            rates.append(None if lr is None else
                         {"value": lr.value, "lo": lr.lo,
                          "hi": (None if math.isinf(lr.hi) else lr.hi)})
        return {"eps_ladder": list(self.eps_ladder), "log_rates": rates,
                "lambda_value": self.lambda_value, "dp_value": self.dp_value,
                "verdict": self.verdict, "details": self.details}

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["eps", "log_rate", "ci_lo", "ci_hi", "lambda", "dp_value"])
            for e, lr in zip(self.eps_ladder, self.log_rates):
                if lr is None:
                    row = [e, "", "", ""]
                else:
                    row = [e, lr.value, lr.lo, "" if math.isinf(lr.hi) else lr.hi]
                w.writerow(row + [self.lambda_value, self.dp_value])


def _mc_ladder(config: LdpConfig, event: EventSpec):
    estimates, log_rates = [], []
    for e in config.eps_ladder:
        est = estimate_event_probability(
            config.domain, config.field, config.coeffs, NoiseScale(e),
            config.t0, config.x0, config.mc_grid, event,
            config.n_samples, config.seed,
            chunk_size=config.chunk_size, n_threads=config.n_threads)
        estimates.append(est)
        log_rates.append(None if est.zero_hit else log_rate_estimate(est, NoiseScale(e)))
    return estimates, log_rates


def _slack(config: LdpConfig, lam: float, smallest_rate: Optional[LogRateInterval]) -> dict:
    stat = 0.0
    if smallest_rate is not None and math.isfinite(smallest_rate.hi):
        stat = 0.5 * (smallest_rate.hi - smallest_rate.lo)
    items = {"statistical": stat, "scheme": config.scheme_tol,
             "lambda_fraction": config.lambda_fraction * abs(lam)}
    items["total"] = items["statistical"] + items["scheme"] + items["lambda_fraction"]
    return items


def _estimate_rows(estimates) -> list:
    return [{"p_hat": est.p_hat, "ci_half_width": est.ci_half_width,
             "n_hits": est.n_hits, "n_samples": est.n_samples}
            for est in estimates]


def _gaps(mc: Optional[float], lam: float, dp: Optional[float]) -> dict:
    out = {}
    if mc is not None:
        out["mc_minus_lambda"] = mc - lam
    if dp is not None:
        out["lambda_minus_dp"] = lam - dp
    if mc is not None and dp is not None:
        out["mc_minus_dp"] = mc - dp
    return out


def run_upper_bound_experiment(config: LdpConfig) -> LdpReport:
    """Ball event: the small-noise log-rates must not exceed the action.

    The PDE value comes from the capped obstacle problem, whose value at
    (t0, x0) is the capped action min(A, Lambda).
    """
    if len(config.references) != 1:
        raise ValueError("upper-bound experiment uses exactly one tube")
    ref, r = config.references[0], config.radii[0]
    event = EventSpec.ball(ref, r)
    estimates, log_rates = _mc_ladder(config, event)

    lam_res = rate_of_event(config.domain, config.field, config.coeffs,
                            config.t0, config.x0, event, tol=config.rate_tol,
                            t_end=config.t_end, n_segments=config.rate_segments,
                            max_segments=config.rate_max_segments)
    lam = lam_res.value

    obstacle = tube_obstacle(ref, r, config.obstacle_height, complement=True,
                             smoothing=config.cell_width())
    vg = solve_limit_vi(config.domain, config.field, config.coeffs, obstacle,
                        MIN_TYPE, n_x=config.n_x, t0=config.t0, t_end=config.t_end)
    dp_value = float(vg.value_at(config.t0, config.x0))

    smallest = log_rates[-1]
    slack = _slack(config, lam, smallest)
    if any(est.zero_hit for est in estimates):
        verdict = INCONCLUSIVE
    elif smallest.value <= lam + slack["total"]:
        verdict = CONSISTENT
    else:
        verdict = INCONSISTENT
    details = {"bound": "upper", "event": "ball", "slack": slack,
               "estimates": _estimate_rows(estimates),
               "lambda_residual": lam_res.constraint_residual,
               "gaps": _gaps(None if smallest is None else smallest.value, lam, dp_value),
               "vi_n_t": vg.meta["n_t"]}
    return LdpReport(eps_ladder=list(config.eps_ladder), log_rates=log_rates,
                     lambda_value=lam, dp_value=dp_value, verdict=verdict,
                     details=details)


def run_lower_bound_experiment(config: LdpConfig) -> LdpReport:
    """Intersection-of-complements event: log-rates must not undershoot.

    The DP value is the multiple-stopping reduction with capped indicator
    obstacles, one per tube.
    """
    event = EventSpec.complements(config.references, config.radii)
    estimates, log_rates = _mc_ladder(config, event)

    lam_res = rate_of_event(config.domain, config.field, config.coeffs,
                            config.t0, config.x0, event, tol=config.rate_tol,
                            t_end=config.t_end, n_segments=config.rate_segments,
                            max_segments=config.rate_max_segments)
    lam = lam_res.value

    dp_grid = TimeGrid.uniform(config.t0, config.t_end, config.dp_n_steps)
    obstacles = [tube_indicator_obstacle(ref, r, config.obstacle_height)
                 for ref, r in zip(config.references, config.radii)]
    m = config.coeffs.m
    controls = [np.full(m, a) for a in config.dp_controls]
    problem = DiscreteProblem.build(config.domain, config.field, config.coeffs,
                                    dp_grid, controls, obstacles,
                                    substeps=config.dp_substeps)
    dp_value = reduced_value(problem, config.t0, config.x0)

    smallest = log_rates[-1]
    slack = _slack(config, lam, smallest)
    if any(est.zero_hit for est in estimates):
        verdict = INCONCLUSIVE
    elif smallest.value >= lam - slack["total"]:
        verdict = CONSISTENT
    else:
        verdict = INCONSISTENT
    details = {"bound": "lower", "event": "intersection_of_complements",
               "slack": slack, "estimates": _estimate_rows(estimates),
               "lambda_residual": lam_res.constraint_residual,
               "gaps": _gaps(None if smallest is None else smallest.value, lam, dp_value),
               "dp_n_steps": config.dp_n_steps}
    return LdpReport(eps_ladder=list(config.eps_ladder), log_rates=log_rates,
                     lambda_value=lam, dp_value=dp_value, verdict=verdict,
                     details=details)


@dataclass
class CapIdentityReport:
    eps: float
    heights: list
    values: list
    reference_value: float
    targets: list
    tol_rel: float
    passed: bool

    def to_dict(self) -> dict:
        return {"eps": self.eps, "heights": list(self.heights),
                "values": list(self.values), "targets": list(self.targets),
                "reference_value": self.reference_value,
                "tol_rel": self.tol_rel, "passed": self.passed}


def cap_identity_check(config: LdpConfig) -> CapIdentityReport:
    """Capped obstacle values against min(cap, uncapped value).

    Solves the noise-level obstacle problem at the smallest ladder entry for
    each requested cap height plus one effectively uncapped reference height,
    all on the same tube.
    """
    if len(config.references) != 1:
        raise ValueError("cap identity check uses exactly one tube")
    ref, r = config.references[0], config.radii[0]
    eps = min(config.eps_ladder)
    h = config.cell_width()

    # all heights share the reference run's time step; the tallest obstacle
    # has the steepest ramp, so its auto step is admissible for the others
    # and the comparison then isolates the cap effect
    dt_shared = None

    def value_for(height: float) -> float:
        nonlocal dt_shared
        obstacle = tube_obstacle(ref, r, height, complement=True, smoothing=h)
        vg = solve_eps_vi(config.domain, config.field, config.coeffs, obstacle,
                          NoiseScale(eps), MIN_TYPE, n_x=config.n_x,
                          t0=config.t0, t_end=config.t_end, dt=dt_shared)
        if dt_shared is None:
            dt_shared = vg.dt
        return float(vg.value_at(config.t0, config.x0))

    v_ref = value_for(config.cap_reference_height)
    heights = [float(a) for a in config.cap_heights]
    values = [value_for(a) for a in heights]
    targets = [min(a, v_ref) for a in heights]
    ok = all(abs(v - tgt) <= config.cap_tol_rel * max(tgt, 1e-12)
             for v, tgt in zip(values, targets))
    return CapIdentityReport(eps=eps, heights=heights, values=values,
                             reference_value=v_ref, targets=targets,
                             tol_rel=config.cap_tol_rel, passed=ok)


@dataclass
class GoodnessReport:
    weak_n_values: list
    weak_sup_dists: list
    weak_passed: bool
    quotients: list
    envelope: float
    envelope_stable: bool

    @property
    def passed(self) -> bool:
        return (self.weak_passed and self.envelope_stable
                and math.isfinite(self.envelope))

    def to_dict(self) -> dict:
        return {"weak_n_values": list(self.weak_n_values),
                "weak_sup_dists": list(self.weak_sup_dists),
                "weak_passed": self.weak_passed,
                "quotients": list(self.quotients), "envelope": self.envelope,
                "envelope_stable": self.envelope_stable, "passed": self.passed}


def goodness_proxy(config: LdpConfig) -> GoodnessReport:
    """Compactness proxy for sublevel sets of the rate functional.

    Oscillating controls must stop moving the path (weak stability), and a
    sample of paths driven by controls of bounded action must share one
    Holder-1/2 envelope; the envelope from half the sample must essentially
    bound the whole sample.
    """
    weak = weak_stability_check(config.domain, config.field, config.coeffs,
                                config.t0, config.x0, n_max=config.goodness_n_max,
                                t_end=config.t_end)
    rng = np.random.default_rng(config.seed)
    grid = TimeGrid.uniform(config.t0, config.t_end, 256)
    m = config.coeffs.m
    quotients = []
    for _ in range(config.goodness_n_controls):
        raw = rng.standard_normal((grid.n_steps, m))
        action = 0.5 * float(np.sum(raw ** 2 * grid.dts[:, None]))
        ctrl = Control(grid, raw * math.sqrt(config.goodness_action_bound / action))
        path = solve_reflected_ode(config.domain, config.field, config.coeffs,
                                   ctrl, config.t0, config.x0, grid)
        quotients.append(holder_half_quotient(path))
    quotients = [float(q) for q in quotients]
    half = max(quotients[:max(1, len(quotients) // 2)])
    envelope = max(quotients)
    return GoodnessReport(weak_n_values=[int(n) for n in weak.n_values],
                          weak_sup_dists=[float(d) for d in weak.sup_dists],
                          weak_passed=bool(weak.passed), quotients=quotients,
                          envelope=envelope,
                          envelope_stable=envelope <= 1.5 * half)
