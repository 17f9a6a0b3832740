"""Monte Carlo experiment driver: trials, sweeps, RMSE aggregation, CSV output.

Per trial the world is drawn fresh: sensor true positions around their coarse
locations, the target uniformly in the field (rejecting draws within 1 m of
any sensor, coarse or true, where the measurement model is singular), and the
target prior centered on the drawn truth with the configured covariance. Each
selected algorithm then runs on the same measurement set. Trial t of a run
uses an independent random stream derived from (seed, t), so results are
reproducible and order-independent.

Sweeps substitute one scenario parameter per value: ``delta0`` sets the
reference noise amplitude (noise power delta0^2, with the precision prior
rate tracking it so the prior mean stays at the true precision), ``mu``
scales every sensor prior covariance to mu^2 I, and ``offset`` shifts all
sensor coordinates by [v, v] while the target stays in the base field, which
is what makes larger offsets mean larger distances.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import bcrb as bcrb_mod
from .model import MeasurementSet, Scenario, distance, sample_measurements
from .oracle import GaussNewtonDivergence, GridSpec, gauss_newton_ml, grid_map
from .vmp import DivergenceError, RunOptions, initial_state, run_jlce

FIELD = (100.0, 100.0)
SENSOR_CLEARANCE = 1.0

CSV_COLUMNS = (
    "sweep_value",
    "algorithm",
    "iteration",
    "rmse_target_m",
    "rmse_sensors_m",
    "rmse_gamma",
    "rmse_lambda0_rel",
    "bcrb_x_m2",
    "trials",
    "wall_time_s",
)


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: Scenario
    trials: int = 500
    seed: int = 42
    sweep_param: str | None = None            # one of: delta0, mu, offset
    sweep_values: tuple = ()
    algorithms: tuple = ("jlce",)
    bcrb: bool = False
    record_iterations: bool = False
    max_iter: int = 20
    threshold: float = 1e-3
    paper_literal_ux: bool = False
    field_size: tuple = FIELD

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.sweep_param is not None and self.sweep_param not in (
            "delta0",
            "mu",
            "offset",
        ):
            raise ValueError(f"unknown sweep parameter {self.sweep_param!r}")
        known = {"jlce", "gauss_newton_ml", "grid_map"}
        bad = set(self.algorithms) - known
        if bad:
            raise ValueError(f"unknown algorithms: {sorted(bad)}")
        for v in self.sweep_values:
            if self.sweep_param == "offset":
                if v < 0:
                    raise ValueError("offset sweep values must be non-negative")
            elif not (v > 0):
                raise ValueError("sweep values must be positive")


@dataclass(frozen=True)
class ResultRow:
    sweep_value: float | None
    algorithm: str
    iteration: int
    rmse_target_m: float
    rmse_sensors_m: float | None
    rmse_gamma: float | None
    rmse_lambda0_rel: float | None
    bcrb_x_m2: float | None
    trials: int
    wall_time_s: float | None


@dataclass
class ResultTable:
    rows: list = field(default_factory=list)
    failures: dict = field(default_factory=dict)

    def extend(self, other: "ResultTable") -> None:
        self.rows.extend(other.rows)
        for k, v in other.failures.items():
            self.failures[k] = self.failures.get(k, 0) + v

    def to_csv(self, path, include_timing: bool = False) -> None:
        """Write the table; timing cells stay empty unless asked for, so a
        rerun with the same config reproduces the file byte for byte."""
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(CSV_COLUMNS) + "\n")
            for row in self.rows:
                cells = [
                    _fmt(row.sweep_value),
                    row.algorithm,
                    str(row.iteration),
                    _fmt(row.rmse_target_m),
                    _fmt(row.rmse_sensors_m),
                    _fmt(row.rmse_gamma),
                    _fmt(row.rmse_lambda0_rel),
                    _fmt(row.bcrb_x_m2),
                    str(row.trials),
                    _fmt(row.wall_time_s) if include_timing else "",
                ]
                fh.write(",".join(cells) + "\n")


def _fmt(v) -> str:
    if v is None:
        return ""
    return format(float(v), ".12g")


def rmse(errors) -> float:
    """Root of the mean squared norm over a non-empty list of scalars/vectors."""
    arr = [np.asarray(e, dtype=float) for e in errors]
    if not arr:
        raise ValueError("rmse of an empty list")
    return math.sqrt(math.fsum(float(np.sum(e**2)) for e in arr) / len(arr))


def _draw_world(scenario: Scenario, rng: np.random.Generator, field_size):
    """Sensor truths around the coarse locations, target uniform in the field,
    target prior centered at the drawn truth."""
    n = scenario.n_sensors
    chol = np.linalg.cholesky(scenario.sensor_prior_cov)
    sensors_true = scenario.sensor_prior_means + np.einsum(
        "nij,nj->ni", chol, rng.standard_normal((n, 2))
    )
    rejected = 0
    while True:
        target = rng.uniform((0.0, 0.0), field_size)
        clear_prior = np.min(distance(target, scenario.sensor_prior_means))
        clear_true = np.min(distance(target, sensors_true))
        if min(clear_prior, clear_true) > SENSOR_CLEARANCE:
            break
        rejected += 1
        if rejected > 10000:
            raise RuntimeError("cannot place target clear of sensors")
    return replace(
        scenario,
        target_true=target,
        target_prior_mean=target.copy(),
        sensors_true=sensors_true,
    ), rejected


def _apply_sweep(scenario: Scenario, param: str, value: float) -> Scenario:
    if param == "delta0":
        delta0_sq = float(value) ** 2
        return replace(
            scenario,
            delta0_sq_true=delta0_sq,
            lambda_prior_rate=scenario.lambda_prior_shape * delta0_sq,
        )
    if param == "mu":
        cov = np.broadcast_to(
            float(value) ** 2 * np.eye(2), (scenario.n_sensors, 2, 2)
        ).copy()
        return replace(scenario, sensor_prior_cov=cov)
    if param == "offset":
        shifted = replace(scenario, sensor_offset=np.array([value, value], float))
        return shifted.with_offset_applied()
    raise ValueError(f"unknown sweep parameter {param!r}")


class _Accumulator:
    """Squared-error accumulation for one algorithm across trials."""

    def __init__(self):
        self.target_sq = []
        self.sensor_sq = []
        self.gamma_sq = []
        self.lambda_rel_sq = []
        self.per_iter_sq = {}
        self.failures = 0
        self.wall = 0.0

    def rmse_target(self):
        return math.sqrt(math.fsum(self.target_sq) / len(self.target_sq))

    def opt(self, values):
        if not values:
            return None
        return math.sqrt(math.fsum(values) / len(values))


def _run_algorithms(config: ExperimentConfig, scenario: Scenario, rng, accs):
    measurements = MeasurementSet(
        sample_measurements(scenario, int(rng.integers(0, 2**63 - 1))).r
    )
    truth = scenario.target_true
    options = RunOptions(
        max_iter=config.max_iter,
        threshold=config.threshold,
        paper_literal_ux=config.paper_literal_ux,
    )
    for alg in config.algorithms:
        acc = accs[alg]
        t0 = time.perf_counter()
        try:
            if alg == "jlce":
                trajectory = run_jlce(initial_state(scenario), measurements, options)
                final = trajectory[-1]
                acc.target_sq.append(float(np.sum((final.target.mean - truth) ** 2)))
                sens_err = [
                    float(np.sum((s.mean - st) ** 2))
                    for s, st in zip(final.sensors, scenario.sensors_true)
                ]
                acc.sensor_sq.append(float(np.mean(sens_err)))
                acc.gamma_sq.append((final.gamma.mean - scenario.gamma_true) ** 2)
                lam_true = 1.0 / scenario.delta0_sq_true
                acc.lambda_rel_sq.append(
                    ((final.lambda0.mean - lam_true) / lam_true) ** 2
                )
                if config.record_iterations:
                    for it in range(config.max_iter + 1):
                        state = trajectory[min(it, len(trajectory) - 1)]
                        acc.per_iter_sq.setdefault(it, []).append(
                            float(np.sum((state.target.mean - truth) ** 2))
                        )
            elif alg == "gauss_newton_ml":
                est = gauss_newton_ml(
                    measurements,
                    scenario.sensor_prior_means,
                    scenario.gamma_prior_mean,
                    scenario.lambda_prior_shape / scenario.lambda_prior_rate,
                    scenario.target_prior_mean,
                )
                acc.target_sq.append(float(np.sum((est - truth) ** 2)))
            elif alg == "grid_map":
                w, h = config.field_size
                spec = GridSpec((0.0, w), (0.0, h), int(max(w, h)) + 1)
                est = grid_map(measurements, scenario, spec)
                acc.target_sq.append(float(np.sum((est - truth) ** 2)))
        except (ValueError, DivergenceError, GaussNewtonDivergence):
            acc.failures += 1
        acc.wall += time.perf_counter() - t0


def run_trials(config: ExperimentConfig, sweep_value: float | None = None) -> ResultTable:
    """Run the configured trial batch at a single scenario and aggregate RMSEs.

    Failed trials (degenerate geometry or detected divergence) are excluded
    from the affected algorithm's aggregates and counted; more than 1% total
    failures aborts the run.
    """
    scenario = config.scenario.with_offset_applied()
    accs = {alg: _Accumulator() for alg in config.algorithms}
    rejected_draws = 0
    for t in range(config.trials):
        rng = np.random.default_rng([config.seed, t])
        world, rej = _draw_world(scenario, rng, config.field_size)
        rejected_draws += rej
        _run_algorithms(config, world, rng, accs)

    table = ResultTable()
    bound = None
    if config.bcrb:
        center = replace(
            scenario,
            target_prior_mean=np.array(config.field_size, dtype=float) / 2.0,
        )
        bound = bcrb_mod.bcrb_x(bcrb_mod.bayesian_fim(center))
    total_fail = sum(a.failures for a in accs.values())
    total_runs = config.trials * len(config.algorithms)
    for alg in config.algorithms:
        acc = accs[alg]
        table.failures[alg] = table.failures.get(alg, 0) + acc.failures
        n_ok = config.trials - acc.failures
        if n_ok == 0:
            continue
        if alg == "jlce" and config.record_iterations:
            for it in sorted(acc.per_iter_sq):
                sq = acc.per_iter_sq[it]
                table.rows.append(
                    ResultRow(
                        sweep_value=sweep_value,
                        algorithm=alg,
                        iteration=it,
                        rmse_target_m=math.sqrt(math.fsum(sq) / len(sq)),
                        rmse_sensors_m=None,
                        rmse_gamma=None,
                        rmse_lambda0_rel=None,
                        bcrb_x_m2=bound,
                        trials=len(sq),
                        wall_time_s=None,
                    )
                )
        table.rows.append(
            ResultRow(
                sweep_value=sweep_value,
                algorithm=alg,
                iteration=config.max_iter if alg == "jlce" else 0,
                rmse_target_m=acc.rmse_target(),
                rmse_sensors_m=acc.opt(acc.sensor_sq),
                rmse_gamma=acc.opt(acc.gamma_sq),
                rmse_lambda0_rel=acc.opt(acc.lambda_rel_sq),
                bcrb_x_m2=bound,
                trials=n_ok,
                wall_time_s=acc.wall,
            )
        )
    if total_fail > 0.01 * total_runs:
        raise RuntimeError(
            f"{total_fail} of {total_runs} algorithm runs failed (>1%); "
            f"failures by algorithm: {table.failures}"
        )
    return table


def sweep(config: ExperimentConfig) -> ResultTable:
    """Run trials at each sweep value and concatenate the result tables."""
    if config.sweep_param is None or not config.sweep_values:
        return run_trials(config)
    table = ResultTable()
    for value in config.sweep_values:
        sub = replace(
            config,
            scenario=_apply_sweep(config.scenario, config.sweep_param, value),
            sweep_param=None,
            sweep_values=(),
        )
        table.extend(run_trials(sub, sweep_value=value))
    return table
