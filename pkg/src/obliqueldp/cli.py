"""Command line front end: config parsing, orchestration, artifact emission.

Every run reads a JSON config, executes one pipeline, writes its reports
into the output directory, and finishes with a manifest listing the config
hash, the effective seed, library versions, and a checksum for every file
it produced.  The manifest is the only artifact carrying a timestamp, so
repeated runs with the same config and seed emit byte-identical reports.

Exit codes: 0 on success (whatever the scientific verdict), 2 when a
verify-ldp verdict is inconclusive, 1 on configuration or runtime errors.
"""

import argparse
import hashlib
import json
import math
import platform
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .control_stop import DiscreteProblem, multi_stop_value, reduced_value, \
    tube_indicator_obstacle
from .geometry import CoefficientField, Disk, Domain, Ellipse, EpsFamily, \
    Interval, ObliqueField, constant_coefficients, constant_field, \
    normal_field, oblique_from_tangent
from .hjbvi import MAX_TYPE, MIN_TYPE, constant_obstacle, solve_eps_vi, \
    solve_limit_vi, tube_obstacle
from .ldp import LdpConfig, run_lower_bound_experiment, run_upper_bound_experiment
from .rate import rate_of_event, rate_of_path
from .reflect import ReferencePath, TimeGrid
from .sde import EventSpec, NoiseScale, estimate_event_probability, \
    simulate_reflected_sde
from .testfn import build_testfn, check_testfn_properties

_MISSING = object()


class ConfigError(ValueError):
    """Raised for malformed configs; the message names the offending field."""


# ---------------------------------------------------------------------------
# Field access with path-aware diagnostics


def _get(mapping, key, path, default=_MISSING):
    if not isinstance(mapping, dict):
        raise ConfigError(f"{path}: expected an object")
    if key not in mapping:
        if default is not _MISSING:
            return default
        raise ConfigError(f"{path}.{key}: missing required field")
    return mapping[key]


def _num(mapping, key, path, default=_MISSING):
    val = _get(mapping, key, path, default)
    if val is default and default is not _MISSING:
        return val
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{path}.{key}: expected a number")
    return float(val)


def _int(mapping, key, path, default=_MISSING):
    val = _get(mapping, key, path, default)
    if val is default and default is not _MISSING:
        return val
    if isinstance(val, bool) or not isinstance(val, int):
        raise ConfigError(f"{path}.{key}: expected an integer")
    return int(val)


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}")
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return cfg


# ---------------------------------------------------------------------------
# Builders for the named ingredients


def build_domain(block) -> Domain:
    kind = _get(block, "kind", "domain")
    if kind == "interval":
        return Interval(_num(block, "lo", "domain"), _num(block, "hi", "domain"))
    if kind == "disk":
        return Disk(_num(block, "radius", "domain", 1.0),
                    tuple(_get(block, "center", "domain", [0.0, 0.0])))
    if kind == "ellipse":
        return Ellipse(_num(block, "a", "domain"), _num(block, "b", "domain"),
                       tuple(_get(block, "center", "domain", [0.0, 0.0])))
    raise ConfigError(f"domain.kind: unknown built-in '{kind}' "
                      f"(expected interval, disk, or ellipse)")


def build_field(block, domain: Domain) -> ObliqueField:
    kind = _get(block, "kind", "field")
    if kind == "normal":
        return normal_field(domain)
    if kind == "oblique_tangent":
        return oblique_from_tangent(domain, _num(block, "kappa", "field"))
    if kind == "constant":
        return constant_field(_get(block, "vector", "field"), domain)
    raise ConfigError(f"field.kind: unknown built-in '{kind}' "
                      f"(expected normal, oblique_tangent, or constant)")


def _drift_builtin(block, d: int):
    name = _get(block, "name", "coefficients.drift")
    if name == "constant":
        vec = np.asarray(_get(block, "value", "coefficients.drift"), dtype=float)
        return (lambda t, x: vec), 0.0, vec
    if name == "linear":
        mat = np.atleast_2d(np.asarray(_get(block, "matrix", "coefficients.drift"),
                                       dtype=float))
        off = np.asarray(_get(block, "offset", "coefficients.drift",
                              [0.0] * d), dtype=float)
        lip = float(np.linalg.norm(mat, 2))
        return (lambda t, x: off + mat @ np.atleast_1d(x)), lip, None
    if name == "rotational":
        if d != 2:
            raise ConfigError("coefficients.drift: built-in 'rotational' "
                              "needs a two-dimensional domain")
        omega = _num(block, "omega", "coefficients.drift")
        return (lambda t, x: omega * np.array([-x[1], x[0]])), abs(omega), None
    raise ConfigError(f"coefficients.drift.name: unknown built-in '{name}' "
                      f"(expected constant, linear, or rotational)")


def _dispersion_builtin(block, d: int):
    name = _get(block, "name", "coefficients.dispersion")
    if name == "constant":
        mat = np.atleast_2d(np.asarray(_get(block, "value", "coefficients.dispersion"),
                                       dtype=float))
        return (lambda t, x: mat), 0.0, mat
    if name == "linear":
        base = np.atleast_2d(np.asarray(_get(block, "base", "coefficients.dispersion"),
                                        dtype=float))
        slopes = [np.atleast_2d(np.asarray(s, dtype=float))
                  for s in _get(block, "slopes", "coefficients.dispersion")]
        if len(slopes) != d:
            raise ConfigError("coefficients.dispersion.slopes: need one matrix "
                              "per state coordinate")
        lip = math.sqrt(sum(float(np.sum(s * s)) for s in slopes))

        def sigma(t, x):
            x = np.atleast_1d(x)
            return base + sum(x[j] * slopes[j] for j in range(len(slopes)))

        return sigma, lip, None
    raise ConfigError(f"coefficients.dispersion.name: unknown built-in '{name}' "
                      f"(expected constant or linear)")


def build_coefficients(block, d: int) -> CoefficientField:
    b_fun, b_lip, b_const = _drift_builtin(_get(block, "drift", "coefficients"), d)
    s_fun, s_lip, s_const = _dispersion_builtin(
        _get(block, "dispersion", "coefficients"), d)
    m = np.atleast_2d(np.asarray(s_fun(0.0, np.zeros(d)), dtype=float)).shape[1]
    family = None
    pert = _get(block, "perturbation", "coefficients", None)
    if pert is not None:
        shift = np.asarray(_get(pert, "drift_shift", "coefficients.perturbation",
                                [0.0] * d), dtype=float)
        scale = _num(pert, "dispersion_scale", "coefficients.perturbation", 0.0)
        order = _num(pert, "order", "coefficients.perturbation", 1.0)
        if order <= 0:
            raise ConfigError("coefficients.perturbation.order: must be positive")

        def b_of(eps):
            return lambda t, x: np.asarray(b_fun(t, x), dtype=float) \
                + (eps ** order) * shift

        def sigma_of(eps):
            return lambda t, x: (1.0 + scale * eps ** order) \
                * np.asarray(s_fun(t, x), dtype=float)

        family = EpsFamily(b_of=b_of, sigma_of=sigma_of)
    return CoefficientField(b=b_fun, sigma=s_fun, m=m,
                            lipschitz_x=b_lip + s_lip, eps_family=family,
                            constant_b=None if family is not None else b_const,
                            constant_sigma=None if family is not None else s_const)


def build_reference(block, t0: float, t_end: float, path: str) -> ReferencePath:
    kind = _get(block, "kind", path)
    if kind == "constant":
        return ReferencePath.constant(_get(block, "point", path), t0, t_end)
    if kind == "linear":
        start = np.atleast_1d(np.asarray(_get(block, "start", path), dtype=float))
        end = np.atleast_1d(np.asarray(_get(block, "end", path), dtype=float))
        return ReferencePath(np.array([t0, t_end]), np.stack([start, end]))
    if kind == "polyline":
        return ReferencePath(np.asarray(_get(block, "times", path), dtype=float),
                             np.asarray(_get(block, "points", path), dtype=float))
    raise ConfigError(f"{path}.kind: unknown reference kind '{kind}' "
                      f"(expected constant, linear, or polyline)")


def build_event(block, t0: float, t_end: float, path: str) -> EventSpec:
    kind = _get(block, "kind", path)
    refs = [build_reference(r, t0, t_end, f"{path}.references[{i}]")
            for i, r in enumerate(_get(block, "references", path))]
    radii = [float(r) for r in _get(block, "radii", path)]
    try:
        return EventSpec(kind=kind, references=refs, radii=radii)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}")


class RunContext:
    """Config plus the built domain, field, coefficients, and time grid."""

    def __init__(self, cfg: dict, out_dir: Path, seed: int, threads: int):
        self.cfg = cfg
        self.out_dir = out_dir
        self.seed = seed
        self.threads = threads
        self.domain = build_domain(_get(cfg, "domain", "config"))
        self.field = build_field(_get(cfg, "field", "config"), self.domain)
        self.coeffs = build_coefficients(_get(cfg, "coefficients", "config"),
                                         self.domain.dimension)
        time_spec = _get(cfg, "time", "config")
        self.t0 = _num(time_spec, "t0", "time", 0.0)
        self.t_end = _num(time_spec, "t_end", "time")
        self.n_steps = _int(time_spec, "n_steps", "time")
        if self.t_end <= self.t0:
            raise ConfigError("time.t_end: must exceed time.t0")
        if self.n_steps < 1:
            raise ConfigError("time.n_steps: must be at least 1")
        self.x0 = np.atleast_1d(np.asarray(_get(cfg, "x0", "config"), dtype=float))
        tol = _get(cfg, "tolerances", "config", {})
        self.rate_tol = _num(tol, "rate_tol", "tolerances", 1e-3)
        self.scheme_tol = _num(tol, "scheme_tol", "tolerances", 0.02)
        self.lambda_fraction = _num(tol, "lambda_fraction", "tolerances", 0.15)
        for name in ("rate_tol", "scheme_tol", "lambda_fraction"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"tolerances.{name}: must be positive")

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid.uniform(self.t0, self.t_end, self.n_steps)

    def events(self) -> list:
        out = []
        for i, block in enumerate(_get(self.cfg, "events", "config", [])):
            event = build_event(block, self.t0, self.t_end, f"events[{i}]")
            out.append((str(_get(block, "id", f"events[{i}]", f"event-{i}")), event))
        return out

    def event_by_id(self, event_id: str, path: str) -> EventSpec:
        for name, event in self.events():
            if name == event_id:
                return event
        raise ConfigError(f"{path}: no event with id '{event_id}'")

    def write_json(self, name: str, payload: dict) -> str:
        with open(self.out_dir / name, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return name


def _finite_or_none(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


# ---------------------------------------------------------------------------
# Subcommand pipelines; each returns (exit_code, {label: filename})


def cmd_simulate(ctx: RunContext):
    eps = _num(ctx.cfg, "eps", "config")
    path = simulate_reflected_sde(ctx.domain, ctx.field, ctx.coeffs,
                                  NoiseScale(eps), ctx.t0, ctx.x0, ctx.grid,
                                  ctx.seed, trajectory_id=0)
    path.write_csv(ctx.out_dir / "path.csv")
    outputs = {"path": "path.csv"}
    events = ctx.events()
    if events:
        n_samples = _int(ctx.cfg, "n_samples", "config")
        rows = []
        for event_id, event in events:
            est = estimate_event_probability(
                ctx.domain, ctx.field, ctx.coeffs, NoiseScale(eps), ctx.t0,
                ctx.x0, ctx.grid, event, n_samples, ctx.seed,
                n_threads=ctx.threads)
            rows.append({"event_id": event_id, "eps": eps, "p_hat": est.p_hat,
                         "ci": est.ci_half_width, "n": est.n_samples})
        outputs["estimates"] = ctx.write_json("estimates.json", {"estimates": rows})
    return 0, outputs


def cmd_rate(ctx: RunContext):
    block = _get(ctx.cfg, "rate", "config")
    n_segments = _int(block, "n_segments", "rate", 64)
    max_segments = _int(block, "max_segments", "rate", 4 * n_segments)
    substeps = _int(block, "substeps", "rate", 4)
    target = _get(block, "target", "rate", None)
    if target is not None:
        ref = build_reference(target, ctx.t0, ctx.t_end, "rate.target")
        result = rate_of_path(ctx.domain, ctx.field, ctx.coeffs, ctx.t0, ctx.x0,
                              ref, tol=ctx.rate_tol, n_segments=n_segments,
                              substeps=substeps, max_segments=max_segments)
    else:
        event_id = _get(block, "event", "rate")
        event = ctx.event_by_id(event_id, "rate.event")
        result = rate_of_event(ctx.domain, ctx.field, ctx.coeffs, ctx.t0, ctx.x0,
                               event, tol=ctx.rate_tol, t_end=ctx.t_end,
                               n_segments=n_segments, substeps=substeps,
                               max_segments=max_segments)
    control = result.optimizer
    with open(ctx.out_dir / "control.csv", "w") as fh:
        m = control.values.shape[1]
        fh.write(",".join(["t"] + [f"a{j+1}" for j in range(m)]) + "\n")
        for t, row in zip(control.grid.nodes[:-1], control.values):
            fh.write(",".join(f"{v:.17g}" for v in [t, *row]) + "\n")
    payload = {"value": _finite_or_none(result.value),
               "infeasible": result.infeasible,
               "constraint_residual": result.constraint_residual,
               "iterations": result.iterations,
               "action_of_control": control.action(),
               "n_segments": int(control.values.shape[0]),
               "control_csv": "control.csv"}
    outputs = {"rate": ctx.write_json("rate.json", payload),
               "control": "control.csv"}
    return 0, outputs


def cmd_stopping(ctx: RunContext):
    block = _get(ctx.cfg, "stopping", "config")
    n_steps = _int(block, "n_steps", "stopping", 4)
    controls = [np.atleast_1d(np.asarray(a, dtype=float))
                for a in _get(block, "controls", "stopping")]
    grid = TimeGrid.uniform(ctx.t0, ctx.t_end, n_steps)
    obstacles = []
    for i, ob in enumerate(_get(block, "obstacles", "stopping")):
        ref = build_reference(_get(ob, "reference", f"stopping.obstacles[{i}]"),
                              ctx.t0, ctx.t_end, f"stopping.obstacles[{i}].reference")
        obstacles.append(tube_indicator_obstacle(
            ref, _num(ob, "radius", f"stopping.obstacles[{i}]"),
            _num(ob, "height", f"stopping.obstacles[{i}]", 1.0),
            complement=bool(_get(ob, "complement", f"stopping.obstacles[{i}]", False))))
    if not 1 <= len(obstacles) <= 3:
        raise ConfigError("stopping.obstacles: need between 1 and 3 obstacles")
    problem = DiscreteProblem.build(
        ctx.domain, ctx.field, ctx.coeffs, grid, controls, obstacles,
        substeps=_int(block, "substeps", "stopping", 16),
        obstacle_bound=_num(block, "obstacle_bound", "stopping", math.inf))
    budget = _num(block, "budget", "stopping", 1e8)
    values = {}
    indices = list(range(len(obstacles)))
    for size in range(1, len(indices) + 1):
        for subset in _subsets(indices, size):
            sub = DiscreteProblem(grid=problem.grid, control_set=problem.control_set,
                                  state_rule=problem.state_rule,
                                  obstacles=[obstacles[i] for i in subset],
                                  obstacle_bound=problem.obstacle_bound)
            values[",".join(map(str, subset))] = float(multi_stop_value(
                sub, ctx.t0, ctx.x0, budget=budget))
    reduced = float(reduced_value(problem, ctx.t0, ctx.x0))
    full_key = ",".join(map(str, indices))
    payload = {"values_by_subset": values, "reduced_value": reduced,
               "reduction_identity_holds": bool(values[full_key] == reduced),
               "n_obstacles": len(obstacles), "n_steps": n_steps}
    return 0, {"stopping": ctx.write_json("stopping.json", payload)}


def _subsets(indices, size):
    if size == 0:
        yield ()
        return
    for i, head in enumerate(indices):
        for tail in _subsets(indices[i + 1:], size - 1):
            yield (head, *tail)


def cmd_hjb(ctx: RunContext):
    block = _get(ctx.cfg, "hjb", "config")
    vi_name = _get(block, "vi_type", "hjb", "min")
    if vi_name not in ("min", "max"):
        raise ConfigError("hjb.vi_type: expected 'min' or 'max'")
    vi_type = MIN_TYPE if vi_name == "min" else MAX_TYPE
    ob_block = _get(block, "obstacle", "hjb")
    if "height" in ob_block and "reference" not in ob_block:
        obstacle = constant_obstacle(_num(ob_block, "height", "hjb.obstacle"))
    else:
        ref = build_reference(_get(ob_block, "reference", "hjb.obstacle"),
                              ctx.t0, ctx.t_end, "hjb.obstacle.reference")
        n_x = _int(block, "n_x", "hjb")
        box = ctx.domain.bounding_box
        cell = float(box[0, 1] - box[0, 0]) / (n_x - 1)
        smoothing = _get(ob_block, "smoothing", "hjb.obstacle", "cell")
        obstacle = tube_obstacle(
            ref, _num(ob_block, "radius", "hjb.obstacle"),
            _num(ob_block, "height", "hjb.obstacle", 1.0),
            complement=bool(_get(ob_block, "complement", "hjb.obstacle", False)),
            smoothing=cell if smoothing == "cell" else float(smoothing))
    kwargs = dict(n_x=_int(block, "n_x", "hjb"), t0=ctx.t0, t_end=ctx.t_end,
                  store_every=_int(block, "store_every", "hjb", None))
    dv_est = _num(block, "dv_est", "hjb", None)
    if dv_est is not None:
        kwargs["dv_est"] = dv_est
    eps = _num(block, "eps", "hjb", 0.0)
    if eps > 0.0:
        grid = solve_eps_vi(ctx.domain, ctx.field, ctx.coeffs, obstacle,
                            NoiseScale(eps), vi_type, **kwargs)
    else:
        grid = solve_limit_vi(ctx.domain, ctx.field, ctx.coeffs, obstacle,
                              vi_type, **kwargs)
    grid.export_csv(ctx.out_dir / "value.csv")
    grid.save_npz(ctx.out_dir / "value.npz")
    payload = {"value_at_start": grid.value_at(ctx.t0, ctx.x0),
               "vi_type": vi_name, "eps": eps, "h": grid.h, "dt": grid.dt,
               "n_stored_layers": int(len(grid.times))}
    return 0, {"summary": ctx.write_json("hjb.json", payload),
               "values": "value.csv", "layers": "value.npz"}


def cmd_testfn_check(ctx: RunContext):
    block = _get(ctx.cfg, "testfn", "config")
    eps = _num(block, "eps", "testfn")
    rho = _num(block, "rho", "testfn")
    build_kwargs = {}
    for key in ("n_boundary", "probe_samples"):
        val = _int(block, key, "testfn", None)
        if val is not None:
            build_kwargs[key] = val
    tf = build_testfn(ctx.domain, ctx.field, eps, rho, **build_kwargs)
    report = check_testfn_properties(tf, _int(block, "n_samples", "testfn", 4096))
    payload = report.to_dict()
    payload.update({"A": tf.A, "B": tf.B, "C": tf.C, "eps": eps, "rho": rho,
                    "passed": bool(report.min_psi_iii > 0.0
                                   and math.isfinite(report.K_psi_i)
                                   and math.isfinite(report.K_psi_ii))})
    return 0, {"testfn": ctx.write_json("testfn.json", payload)}


def _ldp_config(ctx: RunContext) -> tuple:
    block = _get(ctx.cfg, "ldp", "config")
    refs = [build_reference(r, ctx.t0, ctx.t_end, f"ldp.references[{i}]")
            for i, r in enumerate(_get(block, "references", "ldp"))]
    radii = [float(r) for r in _get(block, "radii", "ldp")]
    ladder = [float(e) for e in _get(ctx.cfg, "eps_ladder", "config")]
    kwargs = dict(
        domain=ctx.domain, field=ctx.field, coeffs=ctx.coeffs, t0=ctx.t0,
        x0=ctx.x0, t_end=ctx.t_end, references=refs, radii=radii,
        eps_ladder=ladder, n_samples=_int(ctx.cfg, "n_samples", "config"),
        n_steps=ctx.n_steps, seed=ctx.seed, scheme_tol=ctx.scheme_tol,
        lambda_fraction=ctx.lambda_fraction, rate_tol=ctx.rate_tol,
        n_threads=ctx.threads)
    for key in ("obstacle_height", "n_x", "rate_segments", "rate_max_segments",
                "dp_n_steps", "dp_substeps"):
        if key in block:
            kwargs[key] = block[key]
    if "dp_controls" in block:
        kwargs["dp_controls"] = [float(a) for a in block["dp_controls"]]
    try:
        config = LdpConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"eps_ladder: {exc}" if "ladder" in str(exc)
                          else f"ldp: {exc}")
    bound = _get(block, "bound", "ldp", "lower")
    if bound not in ("lower", "upper", "both"):
        raise ConfigError("ldp.bound: expected 'lower', 'upper', or 'both'")
    return config, bound


def cmd_verify_ldp(ctx: RunContext):
    config, bound = _ldp_config(ctx)
    runs = {"lower": [run_lower_bound_experiment],
            "upper": [run_upper_bound_experiment],
            "both": [run_lower_bound_experiment, run_upper_bound_experiment]}[bound]
    outputs, verdicts = {}, []
    for run in runs:
        report = run(config)
        side = report.details["bound"]
        stem = "report" if len(runs) == 1 else f"report_{side}"
        report.write_json(ctx.out_dir / f"{stem}.json")
        report.write_csv(ctx.out_dir / f"{stem}.csv")
        outputs[f"{side}_report"] = f"{stem}.json"
        outputs[f"{side}_table"] = f"{stem}.csv"
        verdicts.append(report.verdict)
    return (2 if "inconclusive" in verdicts else 0), outputs


HANDLERS = {
    "simulate": cmd_simulate,
    "rate": cmd_rate,
    "stopping": cmd_stopping,
    "hjb": cmd_hjb,
    "testfn-check": cmd_testfn_check,
    "verify-ldp": cmd_verify_ldp,
}


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(ctx: RunContext, subcommand: str, config_path,
                   outputs: dict) -> None:
    manifest = {
        "subcommand": subcommand,
        "config_path": str(config_path),
        "config_sha256": _sha256(Path(config_path)),
        "seed": ctx.seed,
        "threads": ctx.threads,
        "versions": {"python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__,
                     "obliqueldp": __version__},
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "outputs": {label: {"path": name,
                            "sha256": _sha256(ctx.out_dir / name)}
                    for label, name in sorted(outputs.items())},
    }
    with open(ctx.out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="obliqueldp",
        description="Reflected small-noise diffusions: simulation, rates, "
                    "obstacle problems, and bound verification.")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, help_text in [
            ("simulate", "simulate a reflected path and estimate event odds"),
            ("rate", "least action for a target path or event"),
            ("stopping", "discrete control and multiple-stopping values"),
            ("hjb", "solve the obstacle problem on a grid"),
            ("testfn-check", "build the boundary test function and check it"),
            ("verify-ldp", "compare Monte Carlo log-rates with the action")]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to a JSON run config")
        p.add_argument("--out", default=None,
                       help="output directory (default: config out_dir)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads for Monte Carlo chunks")
    return parser


def run(config_path, subcommand: str, out=None, seed=None, threads=None) -> int:
    cfg = load_config(config_path)
    out_dir = Path(out if out is not None else _get(cfg, "out_dir", "config", "out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    eff_seed = int(seed if seed is not None else _int(cfg, "seed", "config", 20240801))
    eff_threads = int(threads if threads is not None
                      else _int(cfg, "threads", "config", 1))
    if eff_threads < 1:
        raise ConfigError("threads: must be at least 1")
    ctx = RunContext(cfg, out_dir, eff_seed, eff_threads)
    code, outputs = HANDLERS[subcommand](ctx)
    write_manifest(ctx, subcommand, config_path, outputs)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args.config, args.subcommand, out=args.out, seed=args.seed,
                   threads=args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports and exits
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
