"""Shared driver for the experiment scripts: run, tabulate, optionally save."""

from __future__ import annotations

import argparse
import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from mixis.experiments import METHODS, ExperimentSpec, compute_metrics, run_experiment, top_components


@dataclass
class StudyConfig:
    kind: str
    scale: str = "desk"
    seed: int = 0
    replicates: int | None = None
    epsilon: float | None = None
    threads: int = 1
    methods: tuple[str, ...] = METHODS
    out: Path | None = None
    top: int = 10
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_argv(cls, kind: str, argv=None) -> "StudyConfig":
        ap = argparse.ArgumentParser(description=f"{kind.replace('_', ' ')} study")
        ap.add_argument("--scale", choices=["desk", "paper"], default="desk")
        ap.add_argument("--seed", type=int, default=0)
        ap.add_argument("--replicates", type=int)
        ap.add_argument("--epsilon", type=float)
        ap.add_argument("--threads", type=int, default=1)
        ap.add_argument("--methods", default=",".join(METHODS))
        ap.add_argument("--out", type=Path, help="directory for a JSON dump of the metrics")
        ap.add_argument("--top", type=int, default=10, help="weights to list per optimized method")
        a = ap.parse_args(argv)
        return cls(kind, a.scale, a.seed, a.replicates, a.epsilon, a.threads,
                   tuple(m for m in a.methods.split(",") if m), a.out, a.top)


def run_study(cfg: StudyConfig) -> dict:
    spec = ExperimentSpec(cfg.kind, cfg.scale, cfg.replicates, cfg.seed, cfg.epsilon)
    t0 = time.perf_counter()
    result = run_experiment(spec, cfg.methods, threads=cfg.threads)
    elapsed = time.perf_counter() - t0
    rows = compute_metrics(result)

    print(f"{cfg.kind} ({cfg.scale}), {spec.n_replicates} replicates, seed {cfg.seed}, {elapsed:.1f} s")
    print(f"{'method':<14}{'estimate':>14}{'VRF(mc)':>11}{'VRF(uis)':>11}{'MSE/VAR':>10}{'sec/rep':>10}")
    for r in rows:
        print(f"{r.method:<14}{r.estimate:>14.6g}{r.vrf_mc:>11.4g}{r.vrf_uis:>11.4g}"
              f"{r.mse_var_ratio:>10.3f}{r.wall_seconds:>10.3f}")
    tops = {}
    for m in result.methods:
        if not m.startswith("opt_alpha"):
            continue
        tops[m] = top_components(result, m, cfg.top)
        print(f"\nlargest weights, {m}:")
        for row in tops[m]:
            print(f"  j={row['component']:>3}  k={row['k']:>2}  var={row['variance']:<22}"
                  f"{row['mean_alpha']:.4f} (sd {row['sd_alpha']:.4f})")

    summary = {"config": {k: (str(v) if isinstance(v, Path) else v) for k, v in dataclasses.asdict(cfg).items()},
               "elapsed_seconds": elapsed, "mu_exact": result.mu,
               "metrics": [dataclasses.asdict(r) for r in rows], "top_components": tops}
    if cfg.out is not None:
        cfg.out.mkdir(parents=True, exist_ok=True)
        path = cfg.out / f"{cfg.kind}_{cfg.scale}_seed{cfg.seed}_summary.json"
        path.write_text(json.dumps(summary, indent=2) + "\n")
        print(f"\nwrote {path}")
    return summary
