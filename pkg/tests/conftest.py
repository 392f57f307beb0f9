"""Shared builders for tests: discrete families, exhaustive pilots, solver instances."""

from __future__ import annotations

import sys

import numpy as np
import pytest

from mixis.densities import DiscreteDensity, ProposalFamily, WeightedSample
from mixis.oracle import DiscreteSpace, random_space
from mixis.optimizer import ProblemData
from mixis.simplex import ConstraintSet


class TableIntegrand:
    """``f`` on integer atoms given as a lookup table."""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    def __call__(self, X):
        return self.values[np.asarray(X, dtype=float)[:, 0].astype(int)]


def family_from_space(space: DiscreteSpace, defensive_index=None) -> ProposalFamily:
    return ProposalFamily(
        DiscreteDensity(space.p),
        [DiscreteDensity(row) for row in space.q],
        defensive_index=defensive_index,
    )


def exhaustive_pilot(space: DiscreteSpace, alpha_prime) -> tuple[WeightedSample, np.ndarray]:
    """Every atom with positive pilot density once, plus its pilot probability.

    Weighting row ``m`` by ``q_{alpha'}(m)`` turns each sample mean over an
    iid pilot into the corresponding exact expectation.
    """
    a = np.asarray(alpha_prime, dtype=float)
    qa = a @ space.q
    live = np.nonzero(qa > 0)[0]
    sample = WeightedSample(
        points=live.astype(float).reshape(-1, 1),
        f=space.f[live],
        p=space.p[live],
        q=space.q[:, live].T.copy(),
        stratum=np.full(live.size, -1),
        alpha=a,
    )
    return sample, qa[live]


def random_problem(rng: np.random.Generator, n: int, J: int, K: int, eps: float | None = None,
                   slack: float = 0.0) -> ProblemData:
    Z = rng.gamma(1.0, size=(n, J)) + 1e-3
    Y = rng.normal(size=n) + 1.0
    X = rng.normal(size=(n, K))
    eps = 0.1 / J if eps is None else eps
    return ProblemData(Y, X, Z, ConstraintSet.uniform(J, eps, slack))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_space(rng):
    return random_space(rng, M=12, J=4, defensive=True, zero_frac=0.3)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
