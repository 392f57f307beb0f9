"""Mixture-weight vectors and the constraint sets they live in.

A weight vector ``alpha`` is a point of the probability simplex
``S = {alpha_j >= 0, sum alpha_j = 1}``.  The optimizer works on the relaxed
set ``{alpha_j > eps_j, sum alpha_j < 1 + eta}`` and renormalizes at the end.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SUM_TOL = 1e-12


class NonFeasible(ValueError):
    """A weight vector violates a floor or the sum constraint."""

    def __init__(self, constraint: str, index: int | None = None, message: str = ""):
        self.constraint = constraint
        self.index = index
        where = f" (j={index})" if index is not None else ""
        super().__init__(message or f"{constraint} constraint violated{where}")


class Infeasible(ValueError):
    """The constraint set is empty."""


class ZeroVector(ValueError):
    pass


class EpsilonTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class ConstraintSet:
    """Floors ``eps_j`` on each weight and slack ``eta`` on the sum."""

    floors: np.ndarray
    slack: float = 0.0

    def __post_init__(self):
        floors = np.asarray(self.floors, dtype=float).copy()
        if floors.ndim != 1 or floors.size == 0:
            raise ValueError("floors must be a non-empty vector")
        if np.any(floors < 0) or self.slack < 0:
            raise ValueError("floors and slack must be nonnegative")
        floors.setflags(write=False)
        object.__setattr__(self, "floors", floors)
        object.__setattr__(self, "slack", float(self.slack))

    @classmethod
    def uniform(cls, J: int, eps: float = 0.0, slack: float = 0.0) -> "ConstraintSet":
        return cls(np.full(J, float(eps)), slack)

    @property
    def J(self) -> int:
        return self.floors.size

    @property
    def delta(self) -> float:
        """Common barrier argument at the balanced starting point."""
        return (1.0 + self.slack - float(np.sum(self.floors))) / (self.J + 1)

    @property
    def feasible(self) -> bool:
        return self.delta > 0


@dataclass(frozen=True)
class MixtureWeights:
    """A validated point of the simplex."""

    weights: np.ndarray = field(repr=True)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).copy()
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty vector")
        if np.any(w < 0):
            raise NonFeasible("nonnegativity", int(np.argmin(w)) + 1)
        if abs(w.sum() - 1.0) > SUM_TOL:
            raise NonFeasible("sum", message=f"weights sum to {w.sum()!r}, not 1; renormalize first")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, J: int) -> "MixtureWeights":
        return cls(np.full(J, 1.0 / J))

    @property
    def J(self) -> int:
        return self.weights.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.weights, dtype=dtype)

    def __len__(self):
        return self.J

    def __getitem__(self, j):
        return self.weights[j]


def as_weights(alpha) -> np.ndarray:
    if isinstance(alpha, MixtureWeights):
        return alpha.weights
    return np.asarray(alpha, dtype=float)


def renormalize(alpha) -> MixtureWeights:
    a = np.asarray(as_weights(alpha), dtype=float)
    if np.any(a < 0):
        raise NonFeasible("nonnegativity", int(np.argmin(a)) + 1)
    total = a.sum()
    if not total > 0:
        raise ZeroVector("cannot renormalize a zero vector")
    out = a / total
    # one correction pass pins the sum to within an ulp or two of 1
    out = out / out.sum()
    return MixtureWeights(out)


def validate_weights(alpha, constraints: ConstraintSet) -> MixtureWeights:
    """Check ``alpha`` against strict floors and the sum bound.

    Indices in error messages are 1-based to match component numbering.
    """
    a = np.asarray(as_weights(alpha), dtype=float)
    if a.shape != (constraints.J,):
        raise ValueError(f"alpha has length {a.size}, constraints have J={constraints.J}")
    below = np.nonzero(a <= constraints.floors)[0]
    if below.size:
        raise NonFeasible("floor", int(below[0]) + 1)
    if not a.sum() < 1.0 + constraints.slack + SUM_TOL:
        raise NonFeasible("sum")
    return renormalize(a)


def initial_interior_point(constraints: ConstraintSet) -> np.ndarray:
    """Start with every one of the J+1 barrier arguments equal to ``delta``."""
    delta = constraints.delta
    if not delta > 0:
        raise Infeasible(f"constraint set is empty (delta={delta:g})")
    return constraints.floors + delta


def epsilon_penalty_factor(alpha, eps: float) -> float:
    """Variance inflation bound for restricting weights to ``alpha_j >= eps``.

    With ``K`` the number of weights below ``eps`` the factor is
    ``(1 - eps*(J - K)) / (1 - eps*J)``, which is about ``1 + K*eps``.
    """
    a = as_weights(alpha)
    J = a.size
    if not 0 < eps < 1.0 / J:
        raise EpsilonTooLarge(f"need 0 < eps < 1/J = {1.0 / J:g}, got {eps:g}")
    K = int(np.count_nonzero(a < eps))
    return (1.0 - eps * (J - K)) / (1.0 - eps * J)
