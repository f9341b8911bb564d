"""Batch experiment runner: config parsing, validation, reports, CSV export.

A config is a single JSON file; command-line flags override file values,
which override the built-in defaults.  Reports are written only after an
experiment completes, so a failed run leaves no partial files, and they
contain no timestamps, so identical config+seed runs are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diffcalc import DIM_CAP
from .errors import ConfigurationError, EquiflowError
from .flows import XI_MIN
from .geometry import FAMILIES, sample_diffeomorphism, state_order1, state_order2
from .harness import (
    ALGORITHMS,
    FlowBuilder,
    classify_equivariance,
    default_recipe,
    expected_verdict,
    render_reports_text,
    render_table_text,
    reproduce_table,
)
from .integrate import SCHEMES, equivariance_drift, integrate, trajectory_csv_text
from .models import dataset_loss, linear_model, load_dataset, mlp_tanh, Dataset

EXPERIMENTS = ("classify", "table", "drift", "trajectory")

DEFAULTS = {
    "experiment": "table",
    "seed": 0,
    "dims": [2, 4, 8],
    "algorithms": list(ALGORITHMS),
    "families": list(FAMILIES),
    "trials": 32,
    "states_per_trial": 2,
    "tolerance": 1e-7,
    "violation_threshold": 1e-3,
    "noise_variance": 0.5,
    "r": 3.0,
    "epsilon": 1e-8,
    "model": None,
    "dataset": None,
    "diffeo": {"family": "shear", "seed": 1},
    "h_list": [1e-1, 3e-2, 1e-2, 3e-3, 1e-3],
    "horizon": 1.0,
    "scheme": "euler",
    "h": 0.01,
    "steps": 100,
    "theta0": None,
    "out_dir": "out",
}


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "fatal" or "warning"
    message: str

    def __str__(self):
        return f"{self.severity}: {self.message}"


def load_config(path) -> dict:
    """Read a JSON config file and overlay it on the defaults."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            raw = json.load(handle)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"malformed config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError(f"config {path} must be a JSON object")
    merged = dict(DEFAULTS)
    merged.update(raw)
    return merged


def validate(config: dict) -> list[Diagnostic]:
    """Collect fatal errors and warnings without executing or writing anything."""
    out: list[Diagnostic] = []
    fatal = lambda msg: out.append(Diagnostic("fatal", msg))
    warn = lambda msg: out.append(Diagnostic("warning", msg))

    for key in config:
        if key not in DEFAULTS:
            warn(f"unknown config key {key!r} is ignored")

    if config.get("experiment") not in EXPERIMENTS:
        fatal(f"unknown experiment {config.get('experiment')!r}")
    if not isinstance(config.get("seed"), int):
        fatal("seed is mandatory and must be an integer")

    for name in config.get("algorithms", []):
        if name not in ALGORITHMS:
            fatal(f"unknown algorithm {name!r}")
    for name in config.get("families", []):
        if name not in FAMILIES:
            fatal(f"unknown family {name!r}")

    dims = config.get("dims", [])
    if not dims:
        fatal("dims must list at least one parameter dimension")
    for dim in dims:
        if not isinstance(dim, int) or dim < 1:
            fatal(f"invalid dimension {dim!r}")
        elif dim > DIM_CAP:
            fatal(f"dimension cap exceeded: {dim} > {DIM_CAP}")

    tol = config.get("tolerance")
    threshold = config.get("violation_threshold")
    if not (isinstance(tol, (int, float)) and tol > 0):
        fatal("tolerance must be a positive number")
    if not (isinstance(threshold, (int, float)) and threshold > 0):
        fatal("violation_threshold must be a positive number")
    if isinstance(tol, (int, float)) and isinstance(threshold, (int, float)) and tol >= threshold:
        fatal(
            f"tolerance {tol} must be strictly below the violation threshold {threshold}"
        )

    if not isinstance(config.get("trials"), int) or config.get("trials", 0) < 1:
        fatal("trials must be a positive integer")
    elif config["trials"] == 1:
        warn("single-trial runs give verdicts from one sampled reparameterization")
    if not isinstance(config.get("states_per_trial"), int) or config.get("states_per_trial", 0) < 1:
        fatal("states_per_trial must be a positive integer")

    for key in ("noise_variance", "r", "epsilon", "horizon", "h"):
        value = config.get(key)
        if not isinstance(value, (int, float)) or value <= 0:
            fatal(f"{key} must be a positive number")
    if not isinstance(config.get("steps"), int) or config.get("steps", 0) < 1:
        fatal("steps must be a positive integer")
    if config.get("scheme") not in SCHEMES:
        fatal(f"unknown scheme {config.get('scheme')!r}")
    h_list = config.get("h_list", [])
    if not h_list or any(not isinstance(h, (int, float)) or h <= 0 for h in h_list):
        fatal("h_list must be a non-empty list of positive step sizes")

    diffeo = config.get("diffeo") or {}
    if not isinstance(diffeo, dict) or diffeo.get("family") not in FAMILIES:
        fatal(f"diffeo must name a family among {FAMILIES}")
    elif not isinstance(diffeo.get("seed", 0), int):
        fatal("diffeo seed must be an integer")

    model_cfg = config.get("model")
    if model_cfg is not None:
        try:
            model = _build_model(model_cfg)
            if config.get("dims") and list(config["dims"]) != [model.param_dim]:
                warn(
                    f"custom model fixes the dimension to {model.param_dim}; "
                    "dims entry is ignored"
                )
        except (ConfigurationError, TypeError, KeyError) as exc:
            fatal(f"invalid model recipe: {exc}")

    data_cfg = config.get("dataset")
    if data_cfg is not None:
        if model_cfg is None:
            fatal("a dataset file requires an explicit model recipe")
        if not isinstance(data_cfg, dict) or "path" not in data_cfg:
            fatal("dataset must be an object with path, in_dim, out_dim")
        elif not Path(data_cfg["path"]).exists():
            fatal(f"dataset file {data_cfg['path']} does not exist")

    theta0 = config.get("theta0")
    if theta0 is not None and (
        not isinstance(theta0, list) or any(not isinstance(v, (int, float)) for v in theta0)
    ):
        fatal("theta0 must be a list of numbers")
    return out


def _build_model(recipe: dict):
    kind = recipe.get("kind")
    if kind == "linear":
        return linear_model(int(recipe["in_dim"]), int(recipe.get("out_dim", 1)))
    if kind == "mlp-tanh":
        return mlp_tanh(
            int(recipe["in_dim"]),
            int(recipe["hidden"]),
            int(recipe.get("out_dim", 1)),
            bias=bool(recipe.get("bias", True)),
        )
    raise ConfigurationError(f"unknown model kind {kind!r}")


def _resolve_problem(config: dict, dim: int):
    """Materialize (model, dataset) for one dimension from the config."""
    model_cfg = config.get("model")
    if model_cfg is None:
        return default_recipe(dim, seed=config["seed"])
    model = _build_model(model_cfg)
    data_cfg = config.get("dataset")
    if data_cfg is not None:
        data = load_dataset(
            data_cfg["path"], int(data_cfg["in_dim"]), int(data_cfg["out_dim"])
        )
    else:
        rng = np.random.default_rng([config["seed"], model.param_dim, 101])
        size = 2 * model.param_dim
        data = Dataset(
            rng.uniform(-1.5, 1.5, size=(size, model.in_dim)),
            rng.uniform(-1.0, 1.0, size=(size, model.out_dim)),
        )
    return model, data


def _effective_dims(config: dict) -> list[int]:
    if config.get("model") is not None:
        return [_build_model(config["model"]).param_dim]
    return list(config["dims"])


def _builder(config: dict, algorithm: str, dim: int) -> FlowBuilder:
    model, data = _resolve_problem(config, dim)
    return FlowBuilder(
        algorithm=algorithm,
        loss=dataset_loss(model, data),
        model=model,
        data=data,
        noise_variance=config["noise_variance"],
        r=config["r"],
        epsilon=config["epsilon"],
    )


def _initial_state(config: dict, order: int, dim: int):
    theta0 = config.get("theta0")
    if theta0 is not None:
        theta = np.asarray(theta0, dtype=float)
        if theta.shape != (dim,):
            raise ConfigurationError(
                f"theta0 has length {theta.shape[0]}, expected {dim}"
            )
    else:
        rng = np.random.default_rng([config["seed"], dim, 202])
        theta = rng.uniform(-1.0, 1.0, size=dim)
    if order == 2:
        return state_order2(theta, np.zeros(dim), time=XI_MIN)
    return state_order1(theta)


def _run_table(config: dict):
    table = reproduce_table(
        dims=_effective_dims(config),
        algorithms=config["algorithms"],
        families=config["families"],
        trials_per_family=config["trials"],
        states_per_trial=config["states_per_trial"],
        seed=config["seed"],
        tolerance=config["tolerance"],
        violation_threshold=config["violation_threshold"],
        noise_variance=config["noise_variance"],
        r=config["r"],
        epsilon=config["epsilon"],
    )
    report = {"experiment": "table", "table": table.as_dict()}
    lines = ["dim,algorithm,family,verdict,expected,max_residual,mean_residual"]
    for dim, rep in table.reports:
        lines.append(
            f"{dim},{rep.algorithm},{rep.family},{rep.verdict},"
            f"{expected_verdict(rep.algorithm, rep.family)},"
            f"{rep.max_residual!r},{rep.mean_residual!r}"
        )
    csvs = {"verdicts.csv": "\n".join(lines) + "\n"}
    status = 0 if table.matches_expected else 1
    return report, render_table_text(table), csvs, status


def _run_classify(config: dict):
    all_reports = []
    text_blocks = []
    for dim in _effective_dims(config):
        for algorithm in config["algorithms"]:
            builder = _builder(config, algorithm, dim)
            reports = classify_equivariance(
                builder,
                families=config["families"],
                trials_per_family=config["trials"],
                states_per_trial=config["states_per_trial"],
                tolerance=config["tolerance"],
                violation_threshold=config["violation_threshold"],
                seed=config["seed"],
            )
            all_reports.extend({"dim": dim, **r.as_dict()} for r in reports)
            text_blocks.append(f"N = {dim}, {algorithm}\n" + render_reports_text(reports))
    report = {"experiment": "classify", "reports": all_reports}
    return report, "\n\n".join(text_blocks), {}, 0


def _run_drift(config: dict):
    dim = _effective_dims(config)[0]
    diffeo_cfg = config["diffeo"]
    g = sample_diffeomorphism(
        diffeo_cfg["family"],
        dim,
        np.random.default_rng([int(diffeo_cfg.get("seed", 0)), dim]),
    )
    results = []
    csvs = {}
    text_lines = []
    for algorithm in config["algorithms"]:
        builder = _builder(config, algorithm, dim)
        start = _initial_state(config, builder.order, dim)
        drift = equivariance_drift(
            builder,
            g,
            start,
            h_list=config["h_list"],
            horizon=config["horizon"],
            scheme=config["scheme"],
        )
        results.append(
            {
                "algorithm": algorithm,
                "dim": dim,
                "family": diffeo_cfg["family"],
                "scheme": drift.scheme,
                "slope": drift.slope,
                "points": [[h, d] for h, d in drift.points],
                "diverged": list(drift.diverged),
            }
        )
        rows = ["h,defect"] + [f"{h!r},{d!r}" for h, d in drift.points]
        csvs[f"drift_{algorithm}.csv"] = "\n".join(rows) + "\n"
        text_lines.append(
            f"{algorithm} under {diffeo_cfg['family']} ({drift.scheme}): "
            f"slope {drift.slope:.3f} over {len(drift.points)} step sizes"
            + (f", diverged at h in {list(drift.diverged)}" if drift.diverged else "")
        )
    report = {"experiment": "drift", "results": results}
    return report, "\n".join(text_lines), csvs, 0


def _run_trajectory(config: dict):
    dim = _effective_dims(config)[0]
    results = []
    csvs = {}
    text_lines = []
    for algorithm in config["algorithms"]:
        builder = _builder(config, algorithm, dim)
        start = _initial_state(config, builder.order, dim)
        trajectory = integrate(
            builder.build(),
            start,
            h=config["h"],
            steps=config["steps"],
            scheme=config["scheme"],
        )
        name = f"trajectory_{algorithm}.csv"
        final = trajectory.final
        results.append(
            {
                "algorithm": algorithm,
                "dim": dim,
                "scheme": config["scheme"],
                "h": config["h"],
                "steps": config["steps"],
                "final_time": final.time,
                "final_theta": [float(v) for v in final.theta],
                "csv": name,
            }
        )
        csvs[name] = trajectory_csv_text(trajectory)
        text_lines.append(
            f"{algorithm}: {config['steps']} x {config['scheme']} steps of h={config['h']}"
            f" ended at theta={final.theta.tolist()}"
        )
    report = {"experiment": "trajectory", "results": results}
    return report, "\n".join(text_lines), csvs, 0


_RUNNERS = {
    "table": _run_table,
    "classify": _run_classify,
    "drift": _run_drift,
    "trajectory": _run_trajectory,
}


def run(config: dict) -> int:
    """Validate, execute, and write report.json / report.txt / CSVs.

    Returns the process exit status.  Nothing is written when validation
    fails or the experiment raises, so there are no partial output files.
    """
    diagnostics = validate(config)
    for diag in diagnostics:
        print(diag, file=sys.stderr)
    if any(d.severity == "fatal" for d in diagnostics):
        return 2

    report, text, csvs, status = _RUNNERS[config["experiment"]](config)
    report = {"config": _json_safe(config), **report}

    out_dir = Path(config["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    (out_dir / "report.txt").write_text(text + "\n", encoding="utf-8")
    for name, payload in csvs.items():
        (out_dir / name).write_text(payload, encoding="utf-8")
    print(f"wrote {out_dir / 'report.json'}")
    return status


def _json_safe(value):
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    return value


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="equiflow",
        description="Equivariance experiments for training-flow ODEs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_parser = sub.add_parser("run", help="execute an experiment config")
    run_parser.add_argument("config", help="path to a JSON config file")
    run_parser.add_argument("--seed", type=int, default=None, help="override the seed")
    run_parser.add_argument("--out", default=None, help="override the output directory")
    run_parser.add_argument(
        "--experiment", default=None, choices=EXPERIMENTS, help="override the experiment"
    )

    validate_parser = sub.add_parser("validate", help="check a config without running")
    validate_parser.add_argument("config", help="path to a JSON config file")

    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        if args.command == "validate":
            diagnostics = validate(config)
            for diag in diagnostics:
                print(diag)
            if not diagnostics:
                print("config ok")
            return 2 if any(d.severity == "fatal" for d in diagnostics) else 0
        # flag > file > default
        if args.seed is not None:
            config["seed"] = args.seed
        if args.out is not None:
            config["out_dir"] = args.out
        if args.experiment is not None:
            config["experiment"] = args.experiment
        return run(config)
    except EquiflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def console_main() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
