"""Two-stage adaptive mixture importance sampling.

A uniform stratified pilot sample is used to fit the mixture weights (and,
optionally, control-variate slopes) by convex optimisation; a fresh final
sample from the fitted mixture gives the estimate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .densities import ProposalFamily, WeightedSample, draw_mixture
from .estimators import ControlCoefficients, EstimateReport, cv_estimate, mixture_estimate
from .optimizer import BarrierConfig, NumericalBreakdown, ProblemData, Solution, assemble_problem, solve
from .regression import fit_control_coefficients
from .simplex import ConstraintSet, MixtureWeights

log = logging.getLogger(__name__)

class ShapeMismatch(ValueError):
    pass


# child-stream indices below (seed, replicate)
PILOT_STREAM = 0
UNIFORM_STREAM = 1
OPT_ALPHA_STREAM = 2
OPT_ALPHA_CV_STREAM = 3


@dataclass(frozen=True)
class PipelineConfig:
    family: ProposalFamily
    f: Callable[[np.ndarray], np.ndarray]
    n_pilot: int
    n_final: int
    use_cv: bool = True
    epsilon_floor: float | None = None
    estimator_kind: str = "hat"
    stratified: bool = True
    seed: int = 0
    barrier: BarrierConfig = field(default_factory=BarrierConfig)

    def __post_init__(self):
        if self.n_pilot <= 0 or self.n_final <= 0:
            raise ValueError("sample sizes must be positive")
        if not self.floor < 1.0 / self.family.J:
            raise ValueError(f"epsilon_floor must be below 1/J = {1.0 / self.family.J:g}")
        if self.estimator_kind not in ("hat", "tilde"):
            raise ValueError("estimator_kind must be 'hat' or 'tilde'")

    @property
    def floor(self) -> float:
        """Default floor gives each component a tenth of an equal share."""
        return 0.1 / self.family.J if self.epsilon_floor is None else self.epsilon_floor

    @property
    def J(self) -> int:
        return self.family.J


@dataclass
class StageResult:
    alpha: MixtureWeights
    solution: Solution | None
    fell_back: bool = False
    message: str = ""


@dataclass
class TwoStageResult:
    alpha_star: MixtureWeights
    beta_refit: ControlCoefficients | None
    report: EstimateReport
    diagnostics: dict


def draw_pilot(cfg: PipelineConfig, replicate: int = 0) -> WeightedSample:
    return draw_mixture(cfg.family, MixtureWeights.uniform(cfg.J), cfg.n_pilot,
                        (cfg.seed, replicate, PILOT_STREAM), f=cfg.f, stratified=True)


def optimize_alpha(pilot: WeightedSample, cfg: PipelineConfig, use_cv: bool | None = None) -> StageResult:
    """Minimise the pilot mean-square criterion over ``alpha`` (and ``beta``).

    Falls back to uniform weights, with a warning, when the solver cannot
    certify its answer.
    """
    use_cv = cfg.use_cv if use_cv is None else use_cv
    J = cfg.J
    if J == 1:
        return StageResult(MixtureWeights(np.ones(1)), None)
    constraints = ConstraintSet.uniform(J, cfg.floor)
    try:
        problem = assemble_problem(pilot, constraints, use_cv=use_cv)
        sol = solve(problem, cfg.barrier)
    except (NumericalBreakdown, ValueError, np.linalg.LinAlgError) as exc:
        msg = f"solver failed ({exc}); using uniform weights"
        log.warning(msg)
        return StageResult(MixtureWeights.uniform(J), None, True, msg)
    if not sol.certified:
        msg = f"solver not certified ({sol.status}); using uniform weights"
        log.warning(msg)
        return StageResult(MixtureWeights.uniform(J), sol, True, msg)
    return StageResult(sol.alpha, sol)


def final_estimate(cfg: PipelineConfig, alpha, replicate: int, stream_index: int, use_cv: bool,
                   sample: WeightedSample | None = None):
    """Draw the final sample (unless given) and estimate from it alone.

    With control variates the slopes are refit by least squares on this
    sample.
    """
    if sample is None:
        sample = draw_mixture(cfg.family, alpha, cfg.n_final, (cfg.seed, replicate, stream_index),
                              f=cfg.f, stratified=cfg.stratified)
    if not use_cv:
        return mixture_estimate(sample), None, sample
    coeffs = fit_control_coefficients(sample, cfg.estimator_kind)
    return cv_estimate(cfg.estimator_kind, sample, coeffs), coeffs, sample


def run_two_stage(cfg: PipelineConfig, replicate: int = 0) -> TwoStageResult:
    pilot = draw_pilot(cfg, replicate)
    stage = optimize_alpha(pilot, cfg)
    stream_index = OPT_ALPHA_CV_STREAM if cfg.use_cv else OPT_ALPHA_STREAM
    report, coeffs, _ = final_estimate(cfg, stage.alpha, replicate, stream_index, cfg.use_cv)
    diagnostics = {
        "fell_back": stage.fell_back,
        "message": stage.message,
        "solver_status": None if stage.solution is None else stage.solution.status,
        "objective": None if stage.solution is None else stage.solution.objective,
        "outer_iterations": 0 if stage.solution is None else len(stage.solution.iterations),
    }
    return TwoStageResult(stage.alpha, coeffs, report, diagnostics)


def stack_multi_integrand(problems: list[ProblemData], weights) -> ProblemData:
    """Weighted-sum criterion over several integrands sharing one sample.

    Rows are stacked with ``sqrt(w_k)`` scaling and the slopes are kept
    separate per integrand (block-diagonal ``X``), so the stacked ``f0`` is
    ``sum_k w_k f0_k``.
    """
    weights = np.asarray(weights, dtype=float)
    if len(problems) != weights.size or not np.all(weights > 0):
        raise ValueError("one positive weight per problem")
    first = problems[0]
    for pr in problems[1:]:
        if pr.n != first.n or pr.J != first.J or not np.array_equal(pr.Z, first.Z):
            raise ShapeMismatch("problems must share n, J and Z")
        if not (np.array_equal(pr.constraints.floors, first.constraints.floors)
                and pr.constraints.slack == first.constraints.slack):
            raise ShapeMismatch("problems must share constraints")
    n = first.n
    K_total = sum(pr.K for pr in problems)
    Y = np.concatenate([np.sqrt(w) * pr.Y for pr, w in zip(problems, weights)])
    X = np.zeros((n * len(problems), K_total))
    comps = []
    col = 0
    for k, (pr, w) in enumerate(zip(problems, weights)):
        X[k * n:(k + 1) * n, col:col + pr.K] = np.sqrt(w) * pr.X
        col += pr.K
        comps.extend(pr.beta_components)
    Z = np.vstack([first.Z] * len(problems))
    return ProblemData(Y, X, Z, first.constraints, tuple(comps))
