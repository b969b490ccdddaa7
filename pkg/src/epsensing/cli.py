"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 failed sweep or failed
comparison, 4 dynamical instability.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import yaml

from .errors import (
    EPSensingError,
    InstabilityError,
    InsufficientDataError,
    ParameterError,
    PreconditionError,
    SweepFailureError,
)
from .estimation import fisher_upper_bound
from .gaussian import vacuum
from .langevin import SdeConfig, compare_covariances, simulate_output_covariance
from .model import SensorParams, build_model, output_state
from .spectral import jordan_decompose, jordan_profile
from .sweep import (
    ModelRecipe,
    ProbeRecipe,
    Scenario,
    ThetaGrid,
    get_scenario,
    run_sweep,
    scenario_names,
    summary_json,
    write_rows,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAILED = 3
EXIT_UNSTABLE = 4


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    scenario: str = "ep_all_modes"
    output: str = "-"
    format: str = "csv"
    theta_min: float | None = None
    theta_max: float | None = None
    points_per_decade: int | None = None
    delta: float | None = None
    seed: int | None = None
    workers: int | None = None
    # jordan
    input: str | None = None
    tol: float = 1e-9
    # oracle
    theta: float = 0.1
    duration: float = 1e4
    dt: float | None = None
    trajectories: int = 64
    bandwidth: float | None = None
    # bound
    delta_min: float | None = None
    delta_max: float | None = None


_NUMERIC = {
    "theta_min": float, "theta_max": float, "points_per_decade": int, "delta": float,
    "seed": int, "workers": int, "tol": float, "theta": float, "duration": float,
    "dt": float, "trajectories": int, "bandwidth": float, "delta_min": float, "delta_max": float,
}


def _load_yaml(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None


def merge_config(command: str, args: argparse.Namespace) -> RunConfig:
    """Document values first, command-line flags on top."""
    doc = {}
    if getattr(args, "config", None):
        doc = _load_yaml(args.config) or {}
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a mapping")
        # nested grid section is accepted as a convenience
        grid = doc.pop("grid", None) or {}
        for src, dst in (("min", "theta_min"), ("max", "theta_max"), ("points_per_decade", "points_per_decade")):
            if src in grid:
                doc.setdefault(dst, grid[src])
        doc.pop("command", None)
    known = {f.name for f in fields(RunConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    values = dict(doc)
    for name in known:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    for name, conv in _NUMERIC.items():
        if values.get(name) is not None:
            try:
                values[name] = conv(float(values[name])) if conv is int else conv(values[name])
            except (TypeError, ValueError):
                raise ConfigError(f"{name} must be numeric, got {values[name]!r}") from None
    values["command"] = command
    return RunConfig(**values)


def _matrix(value, name):
    try:
        a = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a list of numeric rows") from None
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ConfigError(f"{name} must be a square matrix, got shape {a.shape}")
    return a


def scenario_from_document(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise ConfigError("scenario document must be a mapping")
    m = dict(doc.get("model") or {})
    kind = m.pop("kind", "two_mode")
    Pi = m.pop("Pi", None)
    M = m.pop("M", None)
    R = m.pop("R", None)
    try:
        params = SensorParams(**{k: float(v) for k, v in m.items()})
    except TypeError as exc:
        raise ConfigError(f"bad model parameters: {exc}") from None
    as_tuple = lambda a, n: None if a is None else tuple(map(tuple, _matrix(a, n).tolist()))  # noqa: E731
    recipe = ModelRecipe(kind, params, as_tuple(Pi, "Pi"), as_tuple(M, "M"), as_tuple(R, "R"))
    p = dict(doc.get("probe") or {"kind": "jordan"})
    vec = p.get("vector")
    probe = ProbeRecipe(p.get("kind", "jordan"), None if vec is None else tuple(float(x) for x in vec), int(p.get("seed", 0)))
    g = doc.get("grid") or {}
    grid = ThetaGrid(float(g.get("min", 1e-3)), float(g.get("max", 1e-1)), int(g.get("points_per_decade", 10)))
    fr = doc.get("fit_range")
    fit_range = None if fr is None else (float(fr[0]), float(fr[1]))
    flat_range = None
    if params.Delta > 0 and kind != "matrix":
        from .sweep import detuned_ranges

        auto_fit, flat_range = detuned_ranges(params.Delta, grid)
        fit_range = fit_range or auto_fit
    scenario = Scenario(str(doc.get("name", "custom")), recipe, probe, grid, fit_range, flat_range)
    scenario.build_model()
    return scenario


def resolve_scenario(spec: str) -> Scenario:
    path = Path(spec)
    if path.suffix in (".yaml", ".yml", ".json") or path.is_file():
        return scenario_from_document(_load_yaml(path))
    try:
        return get_scenario(spec)
    except ParameterError:
        raise ConfigError(
            f"unknown scenario {spec!r}; valid names: {', '.join(scenario_names())}"
        ) from None


def cmd_sweep(cfg: RunConfig, out=sys.stdout, err=sys.stderr) -> int:
    scenario = resolve_scenario(cfg.scenario)
    scenario = scenario.with_overrides(cfg.theta_min, cfg.theta_max, cfg.points_per_decade, cfg.delta, cfg.seed)
    if cfg.format not in ("csv", "tsv"):
        raise ConfigError(f"format must be csv or tsv, got {cfg.format!r}")
    try:
        result = run_sweep(scenario, workers=cfg.workers)
    except SweepFailureError as exc:
        print(f"sweep failed: {exc}", file=err)
        return EXIT_FAILED
    summary = summary_json(result)
    if cfg.output == "-":
        write_rows(result.rows, out, cfg.format)
        err.write(summary)
    else:
        path = Path(cfg.output)
        with path.open("w", newline="") as fh:
            write_rows(result.rows, fh, cfg.format)
        Path(str(path) + ".fit.json").write_text(summary)
        print(f"wrote {path} ({len(result.rows)} rows); exponent {result.fit.exponent:.6f} "
              f"+/- {result.fit.stderr:.2e} over {result.fit.fit_range}", file=err)
    return EXIT_OK


def cmd_jordan(cfg: RunConfig, out=sys.stdout, err=sys.stderr) -> int:
    if not cfg.input:
        raise ConfigError("jordan needs --input with a matrix document")
    doc = _load_yaml(cfg.input)
    if isinstance(doc, dict):
        if "M" not in doc:
            raise ConfigError("matrix document needs an 'M' entry")
        M = _matrix(doc["M"], "M")
        Pi = None if doc.get("Pi") is None else _matrix(doc["Pi"], "Pi")
    else:
        M, Pi = _matrix(doc, "M"), None
    if Pi is not None and Pi.shape != M.shape:
        raise ConfigError("Pi must have the same shape as M")
    profile = jordan_profile(M, Pi, cfg.tol)
    target = M if Pi is None else np.linalg.solve(Pi.T, M.T).T
    decomposition = jordan_decompose(target, cfg.tol)
    blocks = ",".join(str(b) for b in profile.block_sizes)
    print(f"blocks: [{blocks}]; EP order: {profile.ep_order}", file=out)
    print(f"N_max: {profile.N_max}", file=out)
    print(f"rank sequence: [{','.join(map(str, profile.rank_sequence))}]", file=out)
    print(f"residual: {decomposition.residual:.3e}", file=out)
    print(f"cond(P): {decomposition.cond_P:.3e}", file=out)
    for note in profile.warnings:
        print(f"warning: ambiguous rank, {note}", file=out)
    return EXIT_OK


def _oracle_model(cfg: RunConfig):
    if cfg.scenario and cfg.scenario != "ep_all_modes":
        base = resolve_scenario(cfg.scenario).model_recipe
    else:
        base = ModelRecipe("two_mode", SensorParams())
    delta = 0.2 if cfg.delta is None else cfg.delta
    return base.build(delta=delta)


def cmd_oracle(cfg: RunConfig, out=sys.stdout, err=sys.stderr) -> int:
    model = _oracle_model(cfg)
    seed = 0 if cfg.seed is None else cfg.seed
    try:
        estimate = simulate_output_covariance(
            SdeConfig(model, cfg.dt, cfg.duration, seed), cfg.theta, cfg.trajectories, cfg.bandwidth
        )
    except InsufficientDataError as exc:
        print(f"insufficient data: {exc}", file=err)
        return EXIT_FAILED
    V = output_state(model, cfg.theta, vacuum(model.layout)).V
    rows = compare_covariances(V, estimate)
    print(f"# theta={cfg.theta} Delta={model.params.Delta if model.params else 'n/a'} "
          f"segments={estimate.n_segments} bandwidth={estimate.bandwidth:.4g}", file=out)
    print("entry\tanalytic\testimated\tstderr\ttolerance\tresult", file=out)
    labels = model.layout.labels()
    for r in rows:
        print(f"{labels[r.i]},{labels[r.j]}\t{r.analytic:.10g}\t{r.estimated:.10g}\t{r.stderr:.4g}\t"
              f"{r.tolerance:.4g}\t{'pass' if r.passed else 'FAIL'}", file=out)
    n_fail = sum(not r.passed for r in rows)
    print(f"# {len(rows) - n_fail}/{len(rows)} entries within max(5%, 3 sigma)", file=out)
    return EXIT_OK if n_fail == 0 else EXIT_FAILED


def cmd_bound(cfg: RunConfig, out=sys.stdout, err=sys.stderr) -> int:
    params = SensorParams()
    if cfg.delta_min is not None or cfg.delta_max is not None:
        lo = cfg.delta_min if cfg.delta_min is not None else 1e-3
        hi = cfg.delta_max if cfg.delta_max is not None else 1e-1
        deltas = ThetaGrid(lo, hi, cfg.points_per_decade or 10).values()
        print("delta,I_UB", file=out)
        bounds = []
        for d in deltas:
            ub = fisher_upper_bound(build_model(params.with_delta(d)))
            bounds.append(ub)
            print(f"{format(d, '.17g')},{format(ub, '.17g')}", file=out)
        if len(deltas) >= 5:
            slope, stderr = np.polyfit(np.log(deltas), np.log(bounds), 1, cov=True)
            print(f"# exponent {slope[0]:.6f} +/- {math.sqrt(stderr[0, 0]):.2e}", file=err)
        return EXIT_OK
    delta = 0.05 if cfg.delta is None else cfg.delta
    ub = fisher_upper_bound(build_model(params.with_delta(delta)))
    print(f"Delta: {delta!r}", file=out)
    print(f"I_UB: {format(ub, '.17g')}", file=out)
    return EXIT_OK


COMMANDS = {"sweep": cmd_sweep, "jordan": cmd_jordan, "oracle": cmd_oracle, "bound": cmd_bound}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="epsensing", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML document with default values for any flag")
        p.add_argument("--seed", type=int)
        p.add_argument("--delta", type=float, help="extra loss Delta below threshold")

    p = sub.add_parser("sweep", help="theta sweep of a scenario, CSV output")
    common(p)
    p.add_argument("--scenario", help=f"one of {', '.join(scenario_names())} or a YAML path")
    p.add_argument("--theta-min", type=float)
    p.add_argument("--theta-max", type=float)
    p.add_argument("--points-per-decade", type=int)
    p.add_argument("--output", help="CSV path ('-' for stdout); fit summary goes to <output>.fit.json")
    p.add_argument("--format", choices=("csv", "tsv"))
    p.add_argument("--workers", type=int, help="parallel processes (default $EPSENSING_WORKERS or 1)")

    p = sub.add_parser("jordan", help="zero-eigenvalue Jordan profile of a matrix")
    p.add_argument("--config")
    p.add_argument("--input", help="YAML/JSON document with M (and optional Pi)")
    p.add_argument("--tol", type=float)

    p = sub.add_parser("oracle", help="Langevin time-domain check of V_out")
    common(p)
    p.add_argument("--scenario")
    p.add_argument("--theta", type=float)
    p.add_argument("--duration", type=float, help="duration per trajectory in units of 1/kappa")
    p.add_argument("--dt", type=float)
    p.add_argument("--trajectories", type=int)
    p.add_argument("--bandwidth", type=float)

    p = sub.add_parser("bound", help="below-threshold Fisher-information upper bound")
    common(p)
    p.add_argument("--delta-min", type=float)
    p.add_argument("--delta-max", type=float)
    p.add_argument("--points-per-decade", type=int)
    return parser


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    args = build_parser().parse_args(argv)
    try:
        cfg = merge_config(args.command, args)
        return COMMANDS[args.command](cfg, out, err)
    except ConfigError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_CONFIG
    except InstabilityError as exc:
        print(f"instability: {exc}", file=err)
        return EXIT_UNSTABLE
    except (ParameterError, PreconditionError) as exc:
        print(f"error: {exc}", file=err)
        return EXIT_CONFIG
    except EPSensingError as exc:
        print(f"failed: {exc}", file=err)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
