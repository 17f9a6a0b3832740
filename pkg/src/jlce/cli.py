"""Configuration-driven command line front end.

Config files are flat ``key = value`` text; values are JSON (so coordinate
arrays are written as nested lists) and ``#`` starts a comment. Every key has
a default mirroring the base simulation settings, so an empty config runs the
reference scenario: five sensors at the standard coordinates in a 100 m x
100 m field, gamma prior (3, 0.01), reference noise power 1e-6, twenty
iterations at threshold 1e-3.

Each run echoes the fully resolved configuration to ``<out>.config``;
re-running the same subcommand with that sidecar reproduces the CSV byte for
byte (timing is reported on stderr, never in the CSV, for that reason).

Exit codes: 0 success, 1 configuration/validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import bcrb as bcrb_mod
from .harness import CSV_COLUMNS, ExperimentConfig, ResultRow, ResultTable, sweep
from .model import Scenario, likelihood_grid, sample_measurements
from .oracle import (
    GridSpec,
    gauss_newton_ml,
    gamma_posterior_quadrature,
    grid_map,
    lambda_posterior_quadrature,
)
from .vmp import GammaBelief, RunOptions, initial_state, run_jlce

DEFAULT_SENSORS = [[10.0, 20.0], [80.0, 90.0], [30.0, 40.0], [10.0, 90.0], [60.0, 20.0]]

DEFAULTS = {
    "field.width": 100.0,
    "field.height": 100.0,
    "sensors": DEFAULT_SENSORS,
    "target.prior_mean": [50.0, 50.0],
    "target.prior_cov": 100.0,
    "sensor.mu": 0.1,
    "gamma.mean": 3.0,
    "gamma.var": 0.01,
    "lambda0.a": 1000.0,
    "lambda0.b": None,  # defaults to a * delta0_sq so E[lambda0] = 1/delta0_sq
    "noise.delta0_sq": 1e-6,
    "run.max_iter": 20,
    "run.threshold": 1e-3,
    "run.trials": 500,
    "run.seed": 42,
    "run.record_iterations": False,
    "run.bcrb": False,
    "run.paper_literal_ux": False,
    "sweep.param": None,
    "sweep.values": None,
    "offset": 0.0,
    "grid.resolution": 100,
}

_ALGORITHMS = ("jlce", "gauss_newton_ml")


class CliError(Exception):
    pass


def parse_config_file(path) -> dict:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in DEFAULTS:
                raise CliError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                out[key] = json.loads(value)
            except json.JSONDecodeError:
                out[key] = value
    return out


def resolve_config(file_cfg: dict, overrides: dict) -> dict:
    cfg = dict(DEFAULTS)
    cfg.update(file_cfg)
    for key, value in overrides.items():
        if value is not None:
            cfg[key] = value
    if cfg["lambda0.b"] is None:
        cfg["lambda0.b"] = cfg["lambda0.a"] * cfg["noise.delta0_sq"]
    _validate(cfg)
    return cfg


def _positive(cfg, key):
    if not (isinstance(cfg[key], (int, float)) and cfg[key] > 0):
        raise CliError(f"config field {key!r} must be positive, got {cfg[key]!r}")


def _validate(cfg: dict) -> None:
    for key in (
        "field.width",
        "field.height",
        "sensor.mu",
        "gamma.mean",
        "gamma.var",
        "lambda0.a",
        "lambda0.b",
        "noise.delta0_sq",
        "run.threshold",
    ):
        _positive(cfg, key)
    for key in ("run.max_iter", "run.trials", "run.seed", "grid.resolution"):
        if not isinstance(cfg[key], int) or isinstance(cfg[key], bool):
            raise CliError(f"config field {key!r} must be an integer")
    if cfg["run.max_iter"] < 0 or cfg["run.trials"] < 1 or cfg["grid.resolution"] < 2:
        raise CliError("run.max_iter >= 0, run.trials >= 1, grid.resolution >= 2 required")
    sensors = np.asarray(cfg["sensors"], dtype=float)
    if sensors.ndim != 2 or sensors.shape[1] != 2 or sensors.shape[0] < 3:
        raise CliError("config field 'sensors' must be an array of at least 3 [x, y] pairs")
    if cfg["sweep.param"] is not None and cfg["sweep.param"] not in (
        "delta0",
        "mu",
        "offset",
    ):
        raise CliError("config field 'sweep.param' must be one of delta0, mu, offset")
    if cfg["offset"] < 0:
        raise CliError("config field 'offset' must be non-negative")


def write_sidecar(cfg: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key in sorted(cfg):
            fh.write(f"{key} = {json.dumps(cfg[key])}\n")


def scenario_from_config(cfg: dict) -> Scenario:
    sensors = np.asarray(cfg["sensors"], dtype=float)
    cov = cfg["target.prior_cov"]
    target_cov = (
        float(cov) * np.eye(2) if np.isscalar(cov) else np.asarray(cov, dtype=float)
    )
    offset = float(cfg["offset"])
    return Scenario(
        target_true=np.asarray(cfg["target.prior_mean"], dtype=float),
        sensors_true=sensors.copy(),
        sensor_prior_means=sensors.copy(),
        sensor_prior_cov=float(cfg["sensor.mu"]) ** 2 * np.eye(2),
        target_prior_mean=np.asarray(cfg["target.prior_mean"], dtype=float),
        target_prior_cov=target_cov,
        gamma_true=float(cfg["gamma.mean"]),
        delta0_sq_true=float(cfg["noise.delta0_sq"]),
        gamma_prior_mean=float(cfg["gamma.mean"]),
        gamma_prior_var=float(cfg["gamma.var"]),
        lambda_prior_shape=float(cfg["lambda0.a"]),
        lambda_prior_rate=float(cfg["lambda0.b"]),
        sensor_offset=np.array([offset, offset]),
    )


def experiment_from_config(cfg: dict, algorithms=_ALGORITHMS) -> ExperimentConfig:
    values = cfg["sweep.values"]
    return ExperimentConfig(
        scenario=scenario_from_config(cfg),
        trials=cfg["run.trials"],
        seed=cfg["run.seed"],
        sweep_param=cfg["sweep.param"],
        sweep_values=tuple(values) if values else (),
        algorithms=tuple(algorithms),
        bcrb=bool(cfg["run.bcrb"]),
        record_iterations=bool(cfg["run.record_iterations"]),
        max_iter=cfg["run.max_iter"],
        threshold=cfg["run.threshold"],
        paper_literal_ux=bool(cfg["run.paper_literal_ux"]),
        field_size=(cfg["field.width"], cfg["field.height"]),
    )


def _cmd_simulate(cfg: dict, out: str) -> int:
    config = experiment_from_config(cfg)
    table = sweep(config)
    table.to_csv(out)
    _report(table)
    return 0


def _cmd_sweep(cfg: dict, out: str) -> int:
    if cfg["sweep.param"] is None or not cfg["sweep.values"]:
        raise CliError("sweep requires sweep.param and sweep.values")
    return _cmd_simulate(cfg, out)


def _cmd_bcrb(cfg: dict, out: str) -> int:
    from .harness import _apply_sweep

    base = scenario_from_config(cfg).with_offset_applied()
    values = cfg["sweep.values"] or [None]
    param = cfg["sweep.param"]
    table = ResultTable()
    for value in values:
        scenario = base if value is None else _apply_sweep(base, param, value)
        bound = bcrb_mod.bcrb_x(bcrb_mod.bayesian_fim(scenario))
        table.rows.append(
            ResultRow(
                sweep_value=value,
                algorithm="bcrb",
                iteration=0,
                rmse_target_m=float("nan"),
                rmse_sensors_m=None,
                rmse_gamma=None,
                rmse_lambda0_rel=None,
                bcrb_x_m2=bound,
                trials=0,
                wall_time_s=None,
            )
        )
    table.to_csv(out)
    return 0


def _cmd_likelihood_grid(cfg: dict, out: str) -> int:
    scenario = scenario_from_config(cfg).with_offset_applied()
    measurements = sample_measurements(scenario, cfg["run.seed"])
    lam = 1.0 / cfg["noise.delta0_sq"]
    xs, ys, grid = likelihood_grid(
        measurements,
        scenario.sensor_prior_means,
        cfg["gamma.mean"],
        lam,
        (0.0, cfg["field.width"]),
        (0.0, cfg["field.height"]),
        cfg["grid.resolution"],
    )
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("x,y,loglik\n")
        for i, x in enumerate(xs):
            for j, y in enumerate(ys):
                v = grid[i, j]
                cell = "" if np.isnan(v) else format(v, ".12g")
                fh.write(f"{format(x, '.12g')},{format(y, '.12g')},{cell}\n")
    return 0


def _cmd_oracle_check(cfg: dict, out: str | None) -> int:
    """Small agreement battery between the message-passing code and the
    brute-force references; prints one pass/fail line per check."""
    scenario = scenario_from_config(cfg)
    rng = np.random.default_rng(cfg["run.seed"])
    checks = []

    d = rng.uniform(5.0, 80.0, 6)
    r = d + rng.standard_normal(6) * 0.5
    prior = GammaBelief(3.0, 2.0)
    from .vmp import GaussianBelief2D, PosteriorState, ScalarGaussianBelief
    from .vmp import update_lambda

    qm, _ = lambda_posterior_quadrature(r, d, 2.5, prior)
    sensors = np.stack([d, np.zeros(6)], axis=1)
    state = PosteriorState(
        target=GaussianBelief2D(np.zeros(2), np.eye(2)),
        sensors=tuple(GaussianBelief2D(s, np.eye(2)) for s in sensors),
        gamma=ScalarGaussianBelief(2.5, 1e-12),
        lambda0=prior,
    )
    post = update_lambda(state, r, prior)
    checks.append(
        ("lambda0 conjugate update vs quadrature", abs(post.mean - qm) <= 1e-4 * qm)
    )

    ones = np.ones(4)
    gm, gv = gamma_posterior_quadrature(
        ones,
        np.zeros(2),
        np.stack([np.ones(4), np.zeros(4)], axis=1) * np.array([[1.0, 1.0]]),
        1e6,
        ScalarGaussianBelief(3.0, 0.01),
    )
    checks.append(("gamma posterior = prior at unit distances", abs(gm - 3.0) < 1e-6))

    zero_noise = sample_measurements(
        Scenario(
            target_true=np.array([40.0, 60.0]),
            sensors_true=np.asarray(cfg["sensors"], float),
            sensor_prior_means=np.asarray(cfg["sensors"], float),
            sensor_prior_cov=1e-6 * np.eye(2),
            target_prior_mean=np.array([40.0, 60.0]),
            target_prior_cov=1e-6 * np.eye(2),
            gamma_true=3.0,
            delta0_sq_true=0.0,
            gamma_prior_mean=3.0,
            gamma_prior_var=1e-6,
            lambda_prior_shape=1e9,
            lambda_prior_rate=1e3,
        ),
        seed=0,
    )
    est = gauss_newton_ml(
        zero_noise, np.asarray(cfg["sensors"], float), 3.0, 1e6, np.array([20.0, 20.0])
    )
    checks.append(
        ("Gauss-Newton recovers zero-noise truth", np.linalg.norm(est - [40.0, 60.0]) < 1e-4)
    )

    world = scenario_from_config(cfg)
    measurements = sample_measurements(world, cfg["run.seed"])
    trajectory = run_jlce(
        initial_state(world), measurements, RunOptions(max_iter=cfg["run.max_iter"])
    )
    spec = GridSpec((0.0, cfg["field.width"]), (0.0, cfg["field.height"]), 201)
    ref = grid_map(measurements, world, spec)
    checks.append(
        (
            "message passing agrees with grid MAP within one cell diagonal",
            np.linalg.norm(trajectory[-1].target.mean - ref) < np.hypot(0.5, 0.5) + 0.5,
        )
    )

    failed = 0
    for name, ok in checks:
        print(("PASS " if ok else "FAIL ") + name)
        failed += 0 if ok else 1
    return 0 if failed == 0 else 2


def _report(table: ResultTable) -> None:
    for row in table.rows:
        if row.wall_time_s is not None:
            print(
                f"[timing] sweep={row.sweep_value} {row.algorithm}: "
                f"{row.wall_time_s:.3f} s over {row.trials} trials",
                file=sys.stderr,
            )
    if any(table.failures.values()):
        print(f"[failures] {table.failures}", file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jlce",
        description="Joint localization and channel estimation experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "sweep", "bcrb", "likelihood-grid", "oracle-check"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="flat key = value config file")
        p.add_argument("--out", default=None, help="output CSV path")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--trials", type=int, default=None)
        p.add_argument("--sweep", default=None, metavar="PARAM=V1,V2,...")
        p.add_argument("--bcrb", action="store_true", default=None)
        p.add_argument("--record-iterations", action="store_true", default=None)
        p.add_argument("--paper-literal-ux", action="store_true", default=None)
    return parser


def _parse_sweep_flag(text: str):
    if "=" not in text:
        raise CliError("--sweep expects PARAM=V1,V2,...")
    param, _, values = text.partition("=")
    try:
        parsed = [float(v) for v in values.split(",") if v.strip()]
    except ValueError as exc:
        raise CliError(f"bad sweep values in {text!r}") from exc
    if not parsed:
        raise CliError("--sweep needs at least one value")
    return param.strip(), parsed


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        file_cfg = parse_config_file(args.config) if args.config else {}
        overrides = {
            "run.seed": args.seed,
            "run.trials": args.trials,
            "run.bcrb": args.bcrb,
            "run.record_iterations": args.record_iterations,
            "run.paper_literal_ux": args.paper_literal_ux,
        }
        if args.sweep:
            param, values = _parse_sweep_flag(args.sweep)
            overrides["sweep.param"] = param
            overrides["sweep.values"] = values
        cfg = resolve_config(file_cfg, overrides)
    except (CliError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    needs_out = args.command != "oracle-check"
    if needs_out and not args.out:
        print("error: --out is required for this subcommand", file=sys.stderr)
        return 1

    try:
        if args.command == "simulate":
            code = _cmd_simulate(cfg, args.out)
        elif args.command == "sweep":
            code = _cmd_sweep(cfg, args.out)
        elif args.command == "bcrb":
            code = _cmd_bcrb(cfg, args.out)
        elif args.command == "likelihood-grid":
            code = _cmd_likelihood_grid(cfg, args.out)
        else:
            code = _cmd_oracle_check(cfg, args.out)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - report and exit 2 per contract
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    if args.out:
        write_sidecar(cfg, args.out + ".config")
    return code


def console_main() -> None:
    raise SystemExit(main())
