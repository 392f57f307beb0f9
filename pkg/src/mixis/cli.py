"""Command-line front end: ``mixis run``.

Exit codes: 0 success, 2 bad configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import subprocess
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .experiments import METHODS, ExperimentSpec, compute_metrics, run_experiment, top_components
from .optimizer import BarrierConfig, NumericalBreakdown, load_problem, solve
from .simplex import ConstraintSet, EpsilonTooLarge

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
CONFIG_SCHEMA_VERSION = 1
CSV_COLUMNS = ("method", "cv", "estimate", "vrf_mc", "vrf_uis", "mse_var_ratio", "wall_seconds")
CONFIG_KEYS = {"experiment", "problem", "scale", "seed", "replicates", "methods", "epsilon", "threads", "out", "timing"}


class ConfigError(ValueError):
    pass


def version_string() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _g6(x: float) -> str:
    return "NA" if x is None or not np.isfinite(x) else f"{x:.6g}"


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mixis", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment or solve a dumped problem")
    src = run.add_mutually_exclusive_group()
    src.add_argument("--experiment", choices=["singular", "rare-event"])
    src.add_argument("--problem", help="problem file written by optimizer.dump_problem")
    run.add_argument("--config", help="JSON config; explicit flags take precedence")
    run.add_argument("--scale", choices=["paper", "desk"])
    run.add_argument("--seed", type=int)
    run.add_argument("--replicates", type=int)
    run.add_argument("--methods", help=f"comma-separated subset of {','.join(METHODS)}")
    run.add_argument("--epsilon", type=float, help="lower bound on every mixture weight")
    run.add_argument("--threads", type=int)
    run.add_argument("--out", help="output directory")
    run.add_argument("--timing", action="store_true", default=None,
                     help="fill wall_seconds in the CSV (otherwise NA, keeping output reproducible)")
    run.add_argument("-v", "--verbose", action="store_true")
    return ap


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    if cfg.get("schema_version") != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"config schema_version must be {CONFIG_SCHEMA_VERSION}")
    unknown = set(cfg) - CONFIG_KEYS - {"schema_version"}
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    if "methods" in cfg and isinstance(cfg["methods"], list):
        cfg["methods"] = ",".join(cfg["methods"])
    # numbers may be given as decimal strings
    for key, conv in (("seed", int), ("replicates", int), ("threads", int), ("epsilon", float)):
        if key in cfg and cfg[key] is not None:
            try:
                cfg[key] = conv(cfg[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"config field {key!r}: {exc}") from exc
    return cfg


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, the config file and explicit flags, then validate."""
    settings = {"experiment": None, "problem": None, "scale": "desk", "seed": 0, "replicates": None,
                "methods": ",".join(METHODS), "epsilon": None, "threads": os.cpu_count() or 1,
                "out": ".", "timing": False}
    if args.config:
        settings.update(_load_config(args.config))
    for key in CONFIG_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = val
    if args.experiment or args.problem:
        # a flag choosing the source overrides whichever source the config named
        settings["experiment"], settings["problem"] = args.experiment, args.problem

    if bool(settings["experiment"]) == bool(settings["problem"]):
        raise ConfigError("give exactly one of --experiment or --problem")
    if settings["experiment"] not in (None, "singular", "rare-event"):
        raise ConfigError(f"unknown experiment {settings['experiment']!r}")
    if settings["scale"] not in ("paper", "desk"):
        raise ConfigError(f"unknown scale {settings['scale']!r}")
    if not 0 <= settings["seed"] < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if settings["replicates"] is not None and settings["replicates"] < 2:
        raise ConfigError("need at least 2 replicates")
    if settings["threads"] < 1:
        raise ConfigError("threads must be positive")
    if settings["epsilon"] is not None and settings["epsilon"] < 0:
        raise ConfigError("epsilon must be nonnegative")
    methods = [m.strip() for m in str(settings["methods"]).split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if not methods or bad:
        raise ConfigError(f"methods must be a nonempty subset of {','.join(METHODS)}" + (f"; got {bad}" if bad else ""))
    settings["methods"] = methods
    return settings


def _prepare_out(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")
    return out


def metrics_csv(rows, timing: bool) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([r.method, "yes" if r.cv else "no", _g6(r.estimate), _g6(r.vrf_mc), _g6(r.vrf_uis),
                    _g6(r.mse_var_ratio), _g6(r.wall_seconds) if timing else "NA"])
    return buf.getvalue()


def _full(x):
    if isinstance(x, float):
        return float(f"{x:.17g}") if np.isfinite(x) else repr(x)
    return x


def run_experiment_command(settings: dict) -> int:
    kind = settings["experiment"].replace("-", "_")
    spec = ExperimentSpec(kind, settings["scale"], settings["replicates"], settings["seed"], settings["epsilon"])
    out = _prepare_out(settings["out"])
    try:
        pipeline_cfg = spec.config()
    except (ValueError, EpsilonTooLarge) as exc:
        raise ConfigError(str(exc)) from exc
    result = run_experiment(spec, settings["methods"], threads=settings["threads"])
    rows = compute_metrics(result)
    stem = f"{kind}_{spec.scale}_seed{spec.seed}"
    (out / f"{stem}.csv").write_text(metrics_csv(rows, settings["timing"]))
    sidecar = {
        "version": version_string(),
        "config": {
            **settings,
            "resolved": {**asdict(spec), "n_replicates": spec.n_replicates, "n_pilot": pipeline_cfg.n_pilot,
                         "n_final": pipeline_cfg.n_final, "epsilon_floor": _full(pipeline_cfg.floor),
                         "components": pipeline_cfg.J},
        },
        "mu_exact": result.mu,
        "plain_mc_variance": _full(result.mc_variance),
        "metrics": [{k: _full(v) for k, v in asdict(r).items()} for r in rows],
        "fallbacks": {m: sum(run.fell_back for run in result.runs[m]) for m in result.methods},
        "top_components": {m: [{k: _full(v) for k, v in row.items()} for row in top_components(result, m)]
                           for m in result.methods if m.startswith("opt_alpha")},
    }
    (out / f"{stem}.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    sys.stdout.write(metrics_csv(rows, settings["timing"]))
    return EXIT_OK


def run_problem_command(settings: dict) -> int:
    try:
        problem = load_problem(settings["problem"])
    except (OSError, ValueError, IndexError) as exc:
        raise ConfigError(f"cannot load problem {settings['problem']}: {exc}") from exc
    if settings["epsilon"] is not None:
        try:
            problem = problem.with_constraints(ConstraintSet.uniform(problem.J, settings["epsilon"],
                                                                     problem.constraints.slack))
        except (ValueError, EpsilonTooLarge) as exc:
            raise ConfigError(str(exc)) from exc
    if not problem.constraints.delta > 0:
        raise ConfigError(f"floors leave no feasible weights (sum {problem.constraints.floors.sum():g} >= 1)")
    sol = solve(problem, BarrierConfig())
    fmt = lambda a: " ".join(f"{v:.17g}" for v in np.atleast_1d(a))  # noqa: E731
    print(f"alpha\t{fmt(sol.alpha.weights)}")
    print(f"beta\t{fmt(sol.beta)}")
    print(f"f0\t{sol.objective:.17g}")
    print(f"gap\t{sol.gap:.17g}")
    print(f"certified\t{'yes' if sol.certified else 'no'}")
    print(f"status\t{sol.status}")
    return EXIT_OK if sol.certified or sol.status == "zero objective" else EXIT_NUMERIC


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        settings = resolve(args)
        if settings["problem"]:
            return run_problem_command(settings)
        return run_experiment_command(settings)
    except ConfigError as exc:
        print(f"mixis: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalBreakdown, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"mixis: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
