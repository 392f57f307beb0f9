"""Mixture importance sampling with optimised weights and control variates."""

from .densities import GaussianDensity, DiscreteDensity, ProposalFamily, WeightedSample, draw_mixture
from .estimators import ControlCoefficients, EstimateReport, cv_estimate, mixture_estimate, multiple_is_estimate
from .optimizer import BarrierConfig, ProblemData, Solution, assemble_problem, solve
from .pipeline import PipelineConfig, run_two_stage
from .simplex import ConstraintSet, MixtureWeights

__version__ = "0.1.0"

__all__ = [
    "BarrierConfig", "ConstraintSet", "ControlCoefficients", "DiscreteDensity", "EstimateReport",
    "GaussianDensity", "MixtureWeights", "PipelineConfig", "ProblemData", "ProposalFamily", "Solution",
    "WeightedSample", "assemble_problem", "cv_estimate", "draw_mixture", "mixture_estimate",
    "multiple_is_estimate", "run_two_stage", "solve",
]
