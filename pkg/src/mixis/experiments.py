"""The singular-integrand and rare-event studies, at paper or desk scale."""

from __future__ import annotations

import itertools
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, stats

from .densities import GaussianDensity, ProposalFamily, draw, stream
from .optimizer import BarrierConfig
from .pipeline import (
    OPT_ALPHA_CV_STREAM,
    OPT_ALPHA_STREAM,
    UNIFORM_STREAM,
    PipelineConfig,
    draw_pilot,
    final_estimate,
    optimize_alpha,
)
from .simplex import MixtureWeights

METHODS = ("uniform", "uniform_cv", "opt_alpha", "opt_alpha_cv")

# (n_pilot, n_final, replicates)
SCALES = {
    "singular": {"paper": (10_000, 500_000, 5000), "desk": (2000, 20_000, 30)},
    "rare_event": {"paper": (10_000, 100_000, 5000), "desk": (2000, 10_000, 30)},
}

# plain Monte Carlo draws used to estimate Var_p(f) for the singular integrand
SINGULAR_MC_DRAWS = {"paper": 50_000_000, "desk": 1_000_000}


class InsufficientReplicates(ValueError):
    pass


# --- singular integrand ------------------------------------------------------

SINGULAR_DIM = 5
SINGULAR_GAMMA = 2.4
SINGULAR_RHO = 0.5
SINGULAR_CENTERS = np.array([
    [1, 1, 1, 1, 1],
    [-1, -1, -1, -1, -1],
    [-1, 1, 1, 1, 1],
    [1, -1, -1, -1, -1],
    [-1, -1, 1, 1, 1],
], dtype=float)


class SingularIntegrand:
    """``f(x) = ||x - x0||^(-gamma)``."""

    def __init__(self, x0, gamma: float):
        self.x0 = np.asarray(x0, dtype=float)
        self.gamma = gamma

    def __call__(self, X):
        with np.errstate(divide="ignore"):
            return np.linalg.norm(np.atleast_2d(X) - self.x0, axis=1) ** (-self.gamma)


def singular_index(k: int, r: int) -> int:
    """1-based proposal index of centre ``k`` and variance ``2^-r``."""
    return 10 * (k - 1) + r


def build_singular_family() -> ProposalFamily:
    d = SINGULAR_DIM
    idx = np.arange(d)
    cov = SINGULAR_RHO ** np.abs(idx[:, None] - idx[None, :])
    p = GaussianDensity(np.zeros(d), cov)
    props, labels = [], []
    for k in range(1, 6):
        for r in range(1, 11):
            props.append(GaussianDensity.isotropic(SINGULAR_CENTERS[k - 1], 2.0 ** -r))
            labels.append((str(k), repr(2.0 ** -r)))
    props.append(p)
    labels.append(("D", "D"))
    return ProposalFamily(p, props, defensive_index=len(props) - 1, labels=labels)


def build_singular_config(scale: str = "desk", seed: int = 0, use_cv: bool = True,
                          barrier: BarrierConfig | None = None) -> PipelineConfig:
    n1, n2, _ = SCALES["singular"][scale]
    fam = build_singular_family()
    return PipelineConfig(
        family=fam,
        f=SingularIntegrand(SINGULAR_CENTERS[0], SINGULAR_GAMMA),
        n_pilot=n1,
        n_final=n2,
        use_cv=use_cv,
        epsilon_floor=0.1 / fam.J,
        seed=seed,
        barrier=barrier or BarrierConfig(),
    )


# --- rare event ----------------------------------------------------------------

RARE_DIM = 3
RARE_VARIANCES = (1 / 50, 1 / 40, 1 / 30, 1 / 20, 1 / 10, 1 / 2, 2, 10, 20, 30, 40, 50)
RARE_SIGNS = np.array(list(itertools.product((1.0, -1.0), repeat=3)))


def rare_event_probability(i: int) -> float:
    return 16.0 ** (-i) * 1e-3


RARE_MU = math.fsum(rare_event_probability(i) for i in range(1, 9))


def solve_threshold(target: float) -> float:
    """``eta`` with ``Q(eta)^3 = target`` for the standard normal upper tail ``Q``."""
    tail = target ** (1.0 / 3.0)
    return optimize.bisect(lambda t: stats.norm.sf(t) - tail, 0.0, 40.0, xtol=1e-12, rtol=4 * np.finfo(float).eps)


RARE_THRESHOLDS = np.array([solve_threshold(rare_event_probability(i)) for i in range(1, 9)])


class RareEventIndicator:
    """1 on the union of the eight orthant corners ``D_i``, 0 elsewhere."""

    def __init__(self, thresholds=RARE_THRESHOLDS, signs=RARE_SIGNS):
        self.thresholds = np.asarray(thresholds, dtype=float)
        self.signs = np.asarray(signs, dtype=float)
        # orthant code: bit c set when coordinate c is negative
        codes = ((self.signs < 0) * (1 << np.arange(3))).sum(axis=1)
        self._eta_by_code = np.empty(8)
        self._eta_by_code[codes] = self.thresholds

    def __call__(self, X):
        X = np.atleast_2d(X)
        code = ((X < 0) * (1 << np.arange(3))).sum(axis=1)
        eta = self._eta_by_code[code]
        return np.all(np.abs(X) > eta[:, None], axis=1).astype(float)


def rare_event_centers() -> np.ndarray:
    corners = RARE_SIGNS * RARE_THRESHOLDS[:, None]
    return np.vstack([np.zeros(3), corners])


def build_rare_event_family() -> ProposalFamily:
    p = GaussianDensity(np.zeros(RARE_DIM), np.eye(RARE_DIM))
    props, labels = [], []
    for k, z in enumerate(rare_event_centers()):
        for v in RARE_VARIANCES:
            props.append(GaussianDensity.isotropic(z, v))
            labels.append((str(k), f"{v:.6g}"))
    props.append(p)
    labels.append(("D", "D"))
    return ProposalFamily(p, props, defensive_index=len(props) - 1, labels=labels)


def build_rare_event_config(scale: str = "desk", seed: int = 0, use_cv: bool = True,
                            barrier: BarrierConfig | None = None) -> PipelineConfig:
    n1, n2, _ = SCALES["rare_event"][scale]
    fam = build_rare_event_family()
    return PipelineConfig(
        family=fam,
        f=RareEventIndicator(),
        n_pilot=n1,
        n_final=n2,
        use_cv=use_cv,
        epsilon_floor=0.1 / fam.J,
        seed=seed,
        barrier=barrier or BarrierConfig(),
    )


# --- running ---------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    scale: str = "desk"
    replicates: int | None = None
    seed: int = 0
    epsilon: float | None = None

    def __post_init__(self):
        if self.kind not in SCALES:
            raise ValueError(f"unknown experiment {self.kind!r}")
        if self.scale not in ("paper", "desk"):
            raise ValueError(f"unknown scale {self.scale!r}")

    @property
    def n_replicates(self) -> int:
        return self.replicates or SCALES[self.kind][self.scale][2]

    def config(self) -> PipelineConfig:
        build = build_singular_config if self.kind == "singular" else build_rare_event_config
        cfg = build(self.scale, self.seed)
        if self.epsilon is not None:
            cfg = replace(cfg, epsilon_floor=self.epsilon)
        return cfg


@dataclass
class MethodRun:
    estimate: float
    variance_estimate: float
    alpha: np.ndarray
    wall_seconds: float
    fell_back: bool = False


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    methods: tuple
    runs: dict = field(default_factory=dict)  # method -> list[MethodRun] in replicate order
    mu: float | None = None
    mc_variance: float = math.nan  # per-sample plain Monte Carlo variance
    n_final: int = 0
    labels: tuple = ()


def run_replicate(cfg: PipelineConfig, r: int, methods=METHODS) -> dict:
    out = {}
    J = cfg.J
    uniform = MixtureWeights.uniform(J)
    if "uniform" in methods or "uniform_cv" in methods:
        t0 = time.perf_counter()
        sample = None
        for m, cv in (("uniform", False), ("uniform_cv", True)):
            if m not in methods:
                continue
            t = time.perf_counter()
            rep, _, sample = final_estimate(cfg, uniform, r, UNIFORM_STREAM, cv, sample)
            # both uniform variants share one final sample; each is charged for drawing it
            draw_time = t - t0 if m == "uniform_cv" and "uniform" in methods else 0.0
            out[m] = MethodRun(rep.estimate, rep.variance_estimate, uniform.weights.copy(),
                               time.perf_counter() - t + draw_time)
            t0 = t
    if "opt_alpha" in methods or "opt_alpha_cv" in methods:
        t0 = time.perf_counter()
        pilot = draw_pilot(cfg, r)
        pilot_time = time.perf_counter() - t0
        for m, cv, idx in (("opt_alpha", False, OPT_ALPHA_STREAM), ("opt_alpha_cv", True, OPT_ALPHA_CV_STREAM)):
            if m not in methods:
                continue
            t = time.perf_counter()
            stage = optimize_alpha(pilot, cfg, use_cv=cv)
            rep, _, _ = final_estimate(cfg, stage.alpha, r, idx, cv)
            out[m] = MethodRun(rep.estimate, rep.variance_estimate, stage.alpha.weights.copy(),
                               time.perf_counter() - t + pilot_time, stage.fell_back)
    return out


def plain_mc_variance(cfg: PipelineConfig, draws: int, chunk: int = 1_000_000) -> float:
    """Sample variance of ``f`` under ``p`` from ``draws`` iid points."""
    g = stream(cfg.seed, 2**31 - 1)
    total, total_sq, n = 0.0, 0.0, 0
    shift = None
    while n < draws:
        m = min(chunk, draws - n)
        fx = cfg.f(draw(cfg.family.nominal, m, g))
        if shift is None:
            shift = float(fx.mean())
        d = fx - shift
        total += math.fsum(d)
        total_sq += math.fsum(d * d)
        n += m
    return (total_sq - total * total / n) / (n - 1)


def run_experiment(spec: ExperimentSpec, methods=METHODS, threads: int = 1) -> ExperimentResult:
    methods = tuple(m for m in METHODS if m in methods)
    if not methods:
        raise ValueError("no methods requested")
    cfg = spec.config()
    R = spec.n_replicates
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_rep = list(pool.map(lambda r: run_replicate(cfg, r, methods), range(R)))
    else:
        per_rep = [run_replicate(cfg, r, methods) for r in range(R)]
    runs = {m: [rep[m] for rep in per_rep] for m in methods}
    if spec.kind == "rare_event":
        mu, mc_var = RARE_MU, RARE_MU * (1.0 - RARE_MU)
    else:
        mu, mc_var = None, plain_mc_variance(cfg, SINGULAR_MC_DRAWS[spec.scale])
    return ExperimentResult(spec, methods, runs, mu, mc_var, cfg.n_final, cfg.family.labels)


# --- metrics -------------------------------------------------------------------------


@dataclass(frozen=True)
class MethodMetrics:
    method: str
    cv: bool
    estimate: float
    mse: float
    vrf_mc: float
    vrf_uis: float
    mse_var_ratio: float
    wall_seconds: float
    n_replicates: int
    std_error: float


def _ratio(num: float, den: float) -> float:
    # an exact method (zero squared error) reduces variance without bound
    if den == 0.0:
        return math.nan if num == 0.0 or math.isnan(num) else math.inf
    return num / den


def compute_metrics(result: ExperimentResult) -> list[MethodMetrics]:
    """Variance reduction factors and the squared-error calibration ratio.

    With ``mu`` known the mean squared error is the average of
    ``(estimate - mu)^2``; otherwise it is the sample variance across
    replicates and the calibration ratio uses deviations from the mean.
    """
    rows = {}
    for m in result.methods:
        runs = result.runs[m]
        R = len(runs)
        if R < 2:
            raise InsufficientReplicates(f"need at least 2 replicates, got {R}")
        est = np.array([r.estimate for r in runs])
        var_hat = np.array([r.variance_estimate for r in runs])
        mean = math.fsum(est) / R
        if result.mu is not None:
            err2 = (est - result.mu) ** 2
            mse = math.fsum(err2) / R
        else:
            err2 = (est - mean) ** 2 * R / (R - 1)
            mse = math.fsum(err2) / R
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = float(np.mean(err2 / var_hat))
        sd = math.sqrt(math.fsum((est - mean) ** 2) / (R - 1))
        rows[m] = dict(est=mean, mse=mse, ratio=ratio, wall=float(np.mean([r.wall_seconds for r in runs])),
                       R=R, se=sd / math.sqrt(R))
    mc_mse = result.mc_variance / result.n_final
    base = rows.get("uniform", {}).get("mse", math.nan)
    out = []
    for m, row in rows.items():
        out.append(MethodMetrics(
            method=m,
            cv=m.endswith("_cv"),
            estimate=row["est"],
            mse=row["mse"],
            vrf_mc=_ratio(mc_mse, row["mse"]),
            vrf_uis=_ratio(base, row["mse"]),
            mse_var_ratio=row["ratio"],
            wall_seconds=row["wall"],
            n_replicates=row["R"],
            std_error=row["se"],
        ))
    return out


def top_components(result: ExperimentResult, method: str, k: int = 10) -> list[dict]:
    """Mean and sd of each weight across replicates, largest means first."""
    A = np.array([r.alpha for r in result.runs[method]])
    mean = A.mean(axis=0)
    sd = A.std(axis=0, ddof=1) if A.shape[0] > 1 else np.zeros_like(mean)
    order = np.argsort(-mean, kind="stable")[:k]
    rows = []
    for j in order:
        label = result.labels[j] if result.labels else (str(j + 1), "")
        rows.append({"component": int(j) + 1, "k": label[0], "variance": label[1],
                     "mean_alpha": float(mean[j]), "sd_alpha": float(sd[j])})
    return rows
