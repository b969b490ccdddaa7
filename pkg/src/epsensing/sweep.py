"""Scenario library, theta sweeps and power-law fits."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError, EPSensingError, ParameterError, PreconditionError, SweepFailureError
from .estimation import CovarianceConditionWarning, cramer_rao, fisher_I1, heterodyne_uncertainty, local_exponent
from .model import SensorModel, SensorParams, build_model, model_from_matrix, single_mode_model
from .spectral import jordan_decompose

CSV_COLUMNS = ("theta", "I1", "delta_theta_cr", "delta_theta_het", "status")
MAX_FAILED_FRACTION = 0.2
WORKERS_ENV = "EPSENSING_WORKERS"


@dataclass(frozen=True)
class ThetaGrid:
    min: float
    max: float
    points_per_decade: int = 10

    def __post_init__(self):
        if not (self.min > 0 and self.max > 0):
            raise PreconditionError("theta grid bounds must be positive")
        if self.max < self.min:
            raise PreconditionError(f"empty theta grid: max {self.max} < min {self.min}")
        if self.points_per_decade < 1:
            raise PreconditionError("points_per_decade must be at least 1")

    def values(self) -> np.ndarray:
        decades = math.log10(self.max / self.min)
        n = max(int(round(decades * self.points_per_decade)) + 1, 1)
        if n == 1:
            return np.array([self.min])
        return np.logspace(math.log10(self.min), math.log10(self.max), n)


@dataclass(frozen=True)
class ModelRecipe:
    """How to build the sensor: ``two_mode`` from params, ``single_mode``, or ``matrix``."""

    kind: str = "two_mode"
    params: SensorParams = field(default_factory=SensorParams)
    Pi: tuple | None = None
    M: tuple | None = None
    R: tuple | None = None

    def build(self, delta: float | None = None) -> SensorModel:
        Pi = None if self.Pi is None else np.array(self.Pi, dtype=float)
        params = self.params if delta is None else self.params.with_delta(delta)
        if self.kind == "two_mode":
            return build_model(params, Pi)
        if self.kind == "single_mode":
            return single_mode_model(params.Gamma1, params.Delta, Pi)
        if self.kind == "matrix":
            R = None if self.R is None else np.array(self.R, dtype=float)
            return model_from_matrix(np.array(self.M, dtype=float), Pi, R)
        raise ParameterError(f"unknown model kind {self.kind!r}")


@dataclass(frozen=True)
class ProbeRecipe:
    """Coherent probe amplitude: ``jordan``, ``vector`` or ``random``."""

    kind: str = "jordan"
    vector: tuple | None = None
    seed: int = 0

    def resolve(self, model: SensorModel, reference: SensorModel | None = None) -> np.ndarray:
        if self.kind == "vector":
            v = np.array(self.vector, dtype=float)
            if v.shape != (model.dim,):
                raise ParameterError(f"probe vector must have length {model.dim}")
            return v
        if self.kind == "random":
            v = np.random.default_rng(self.seed).normal(size=model.dim)
            return v / np.linalg.norm(v)
        if self.kind == "jordan":
            return jordan_probe(reference if reference is not None else model)
        raise ParameterError(f"unknown probe kind {self.kind!r}")


def jordan_probe(model: SensorModel) -> np.ndarray:
    """Unit-norm head of the longest zero-eigenvalue chain, P e_N.

    Uses M Pi^{-1} when Pi is invertible and M itself otherwise.
    """
    M = np.asarray(model.M)
    Pi = np.asarray(model.Pi)
    if np.linalg.cond(Pi) < 1e12:
        M = np.linalg.solve(Pi.T, M.T).T
    v = jordan_decompose(M).chain_head(0)
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class Scenario:
    name: str
    model_recipe: ModelRecipe
    probe_recipe: ProbeRecipe
    theta_grid: ThetaGrid
    fit_range: tuple[float, float] | None = None
    flat_range: tuple[float, float] | None = None
    description: str = ""

    @property
    def delta(self) -> float:
        return self.model_recipe.params.Delta

    def build_model(self) -> SensorModel:
        return self.model_recipe.build()

    def reference_model(self) -> SensorModel:
        """Same sensor at threshold; the Jordan probe is defined there."""
        if self.model_recipe.kind == "matrix":
            return self.build_model()
        return self.model_recipe.build(delta=0.0)

    def probe(self) -> np.ndarray:
        return self.probe_recipe.resolve(self.build_model(), self.reference_model())

    def resolved_fit_range(self) -> tuple[float, float]:
        if self.fit_range is not None:
            return tuple(self.fit_range)
        lo = self.theta_grid.min
        return (lo, min(lo * 100.0, self.theta_grid.max))

    def with_overrides(self, theta_min=None, theta_max=None, points_per_decade=None, delta=None, seed=None):
        """Copy with CLI-style overrides; fit ranges follow the new grid and Delta."""
        g = self.theta_grid
        grid = ThetaGrid(
            g.min if theta_min is None else theta_min,
            g.max if theta_max is None else theta_max,
            g.points_per_decade if points_per_decade is None else points_per_decade,
        )
        recipe = self.model_recipe
        if delta is not None:
            recipe = replace(recipe, params=recipe.params.with_delta(delta))
        fit_range, flat_range = self.fit_range, self.flat_range
        if grid != g or delta is not None:
            d = recipe.params.Delta
            if d > 0 and recipe.kind != "matrix":
                fit_range, flat_range = detuned_ranges(d, grid)
            else:
                fit_range, flat_range = None, None
        probe = self.probe_recipe
        if seed is not None and probe.kind == "random":
            probe = replace(probe, seed=seed)
        return replace(
            self,
            model_recipe=recipe,
            probe_recipe=probe,
            theta_grid=grid,
            fit_range=fit_range,
            flat_range=flat_range,
        )


def detuned_ranges(delta: float, grid: ThetaGrid):
    """(theta >= 10 Delta, theta <= Delta / 10) clipped to the grid."""
    return (10.0 * delta, grid.max), (grid.min, delta / 10.0)


def builtin_scenarios() -> list[Scenario]:
    canonical = SensorParams(1.0, 1.0, 1.0)
    grid = ThetaGrid(1e-3, 1e-1, 10)
    detuned = canonical.with_delta(0.05 * canonical.G)
    # two and a half decades either side of Delta
    grid_d = ThetaGrid(1e-4, 1e1, 10)
    fit_d, flat_d = detuned_ranges(detuned.Delta, grid_d)
    return [
        Scenario(
            "ep_all_modes",
            ModelRecipe("two_mode", canonical),
            ProbeRecipe("jordan"),
            grid,
            (1e-3, 1e-1),
            description="EP at lasing threshold, both modes perturbed",
        ),
        Scenario(
            "ep_one_mode",
            ModelRecipe("two_mode", canonical, Pi=((1, 0, 0, 0), (0, 0, 0, 0), (0, 0, 1, 0), (0, 0, 0, 0))),
            ProbeRecipe("jordan"),
            grid,
            (1e-3, 1e-1),
            description="EP at lasing threshold, only mode 1 perturbed",
        ),
        Scenario(
            "single_mode_plain",
            ModelRecipe("single_mode", SensorParams(0.5, 1.0, 0.0)),
            ProbeRecipe("vector", (1.0, 0.0)),
            grid,
            (1e-3, 1e-1),
            description="single mode, no intrinsic loss or gain",
        ),
        Scenario(
            "ep_detuned",
            ModelRecipe("two_mode", detuned),
            ProbeRecipe("jordan"),
            grid_d,
            fit_d,
            flat_d,
            description="EP sensor pushed below threshold by extra loss Delta = 0.05 G",
        ),
    ]


def scenario_names() -> list[str]:
    return [s.name for s in builtin_scenarios()]


def get_scenario(name: str) -> Scenario:
    for s in builtin_scenarios():
        if s.name == name:
            return s
    raise ParameterError(f"unknown scenario {name!r}; valid names: {', '.join(scenario_names())}")


@dataclass(frozen=True)
class SweepRow:
    theta: float
    I1: float
    delta_theta_cr: float
    delta_theta_het: float
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass(frozen=True)
class PowerLawFit:
    exponent: float
    stderr: float
    fit_range: tuple[float, float]
    column: str
    n_points: int


@dataclass
class SweepResult:
    rows: list[SweepRow]
    fit: PowerLawFit
    scenario: Scenario
    het_fit: PowerLawFit | None = None
    cutoff_theta: float | None = None
    flat_slope_max: float | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    @property
    def thetas(self) -> np.ndarray:
        return self.column("theta")

    @property
    def n_failed(self) -> int:
        return sum(not r.ok for r in self.rows)

    def summary(self) -> dict:
        out = {
            "scenario": self.scenario.name,
            "column": self.fit.column,
            "exponent": self.fit.exponent,
            "stderr": self.fit.stderr,
            "fit_range": list(self.fit.fit_range),
            "n_fit_points": self.fit.n_points,
            "n_rows": len(self.rows),
            "n_failed": self.n_failed,
        }
        if self.het_fit is not None:
            out["het_exponent"] = self.het_fit.exponent
            out["het_stderr"] = self.het_fit.stderr
        if self.cutoff_theta is not None:
            out["delta"] = self.scenario.delta
            out["cutoff_theta"] = self.cutoff_theta
            out["flat_range"] = list(self.scenario.flat_range)
            out["flat_slope_max"] = self.flat_slope_max
        return out


def evaluate_point(model: SensorModel, theta: float, mu_in) -> SweepRow:
    try:
        with warnings.catch_warnings():
            # conditioning is guarded by IllConditionedCovarianceError; the
            # warning would only repeat for every point near the EP
            warnings.simplefilter("ignore", CovarianceConditionWarning)
            I1 = fisher_I1(model, theta, mu_in)
            dcr = cramer_rao(I1)
            dhet = heterodyne_uncertainty(model, theta, mu_in)
    except EPSensingError as exc:
        nan = float("nan")
        return SweepRow(float(theta), nan, nan, nan, f"error:{type(exc).__name__}")
    return SweepRow(float(theta), I1, dcr, dhet)


def _evaluate_chunk(args):
    model, thetas, mu = args
    return [evaluate_point(model, t, mu) for t in thetas]


def _worker_count(workers):
    if workers is not None:
        return max(int(workers), 1)
    try:
        return max(int(os.environ.get(WORKERS_ENV, "1")), 1)
    except ValueError:
        raise ParameterError(f"{WORKERS_ENV} must be an integer") from None


def fit_power_law(rows, column: str, fit_range) -> tuple[float, float]:
    """OLS slope of log(column) against log(theta) and its standard error."""
    fit = _fit(rows, column, fit_range)
    return fit.exponent, fit.stderr


def _fit(rows, column, fit_range) -> PowerLawFit:
    lo, hi = fit_range
    slack = 1e-9
    pts = [
        (r.theta, getattr(r, column))
        for r in rows
        if r.ok and lo * (1 - slack) <= r.theta <= hi * (1 + slack)
    ]
    if len(pts) < 5:
        raise PreconditionError(f"power-law fit needs at least 5 points in {fit_range}, got {len(pts)}")
    t, y = np.array(pts).T
    if np.any(~np.isfinite(y)) or np.any(y <= 0):
        raise DomainError(f"non-positive or non-finite {column} values in fit range")
    x, ly = np.log(t), np.log(y)
    xc = x - x.mean()
    slope = float(xc @ (ly - ly.mean()) / (xc @ xc))
    resid = ly - ly.mean() - slope * xc
    dof = len(x) - 2
    stderr = float(math.sqrt((resid @ resid) / dof / (xc @ xc)))
    return PowerLawFit(slope, stderr, (float(lo), float(hi)), column, len(pts))


def locate_cutoff(thetas, values, high_exponent: float) -> float:
    """Theta where the local exponent first reaches half the high-theta exponent."""
    s = local_exponent(thetas, values)
    target = 0.5 * high_exponent
    logt = np.log(thetas)
    for i in range(1, len(s)):
        if s[i - 1] < target <= s[i]:
            f = (target - s[i - 1]) / (s[i] - s[i - 1])
            return float(np.exp(logt[i - 1] + f * (logt[i] - logt[i - 1])))
    raise DomainError("local exponent never crosses the cutoff level")


def run_sweep(scenario: Scenario, workers: int | None = None) -> SweepResult:
    """Evaluate I1, the Cramer-Rao bound and the heterodyne uncertainty on the grid.

    Failed grid points are kept as rows with an ``error:`` status; more than
    20% failures raises :class:`SweepFailureError`.
    """
    thetas = scenario.theta_grid.values()
    if thetas.size == 0:
        raise PreconditionError("empty theta grid")
    model = scenario.build_model()
    mu = scenario.probe()
    n_workers = _worker_count(workers)
    if n_workers > 1 and thetas.size > 1:
        chunks = np.array_split(thetas, min(n_workers, thetas.size))
        with ProcessPoolExecutor(n_workers) as pool:
            parts = pool.map(_evaluate_chunk, [(model, c, mu) for c in chunks])
            rows = [row for part in parts for row in part]
    else:
        rows = [evaluate_point(model, t, mu) for t in thetas]

    n_failed = sum(not r.ok for r in rows)
    if n_failed > MAX_FAILED_FRACTION * len(rows):
        err = SweepFailureError(f"{n_failed} of {len(rows)} grid points failed in {scenario.name}")
        err.rows = rows
        raise err

    fit_range = scenario.resolved_fit_range()
    fit = _fit(rows, "delta_theta_cr", fit_range)
    het_fit = _fit(rows, "delta_theta_het", fit_range)
    result = SweepResult(rows, fit, scenario, het_fit)
    if scenario.flat_range is not None and scenario.delta > 0:
        ok = [r for r in rows if r.ok]
        t = np.array([r.theta for r in ok])
        d = np.array([r.delta_theta_cr for r in ok])
        slopes = local_exponent(t, d)
        lo, hi = scenario.flat_range
        flat = (t >= lo * (1 - 1e-9)) & (t <= hi * (1 + 1e-9))
        result.flat_slope_max = float(np.max(np.abs(slopes[flat]))) if flat.any() else None
        result.cutoff_theta = locate_cutoff(t, d, fit.exponent)
    return result


def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_rows(rows, stream, fmt: str = "csv") -> None:
    if fmt not in ("csv", "tsv"):
        raise ParameterError(f"unknown format {fmt!r}")
    w = csv.writer(stream, delimiter="," if fmt == "csv" else "\t", lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r.theta), _fmt(r.I1), _fmt(r.delta_theta_cr), _fmt(r.delta_theta_het), r.status])


def rows_to_text(rows, fmt: str = "csv") -> str:
    buf = io.StringIO()
    write_rows(rows, buf, fmt)
    return buf.getvalue()


def summary_json(result: SweepResult) -> str:
    return json.dumps(result.summary(), indent=2, sort_keys=True) + "\n"
