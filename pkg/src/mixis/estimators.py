"""Importance sampling estimators over cached sample batches.

All sums go through :func:`math.fsum`, which is correctly rounded and hence
independent of summation order.  Two estimators that reduce to the same
per-point terms therefore return the same float, whatever order the strata
were generated in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from .densities import WeightedSample
from .simplex import as_weights

Kind = Literal["hat", "tilde"]


class ZeroDensityAtSample(ValueError):
    pass


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class EstimateReport:
    estimate: float
    variance_estimate: float
    n_used: int
    method: str

    @property
    def std_error(self) -> float:
        return math.sqrt(self.variance_estimate)


@dataclass(frozen=True)
class ControlCoefficients:
    """Control-variate slopes ``beta`` and the known means ``theta = E_p[h]``.

    ``columns`` lists the components whose slopes were fitted by least
    squares (empty when ``beta`` was supplied by hand); it sets the degrees
    of freedom of the intercept variance.
    """

    beta: np.ndarray
    theta: np.ndarray | None = None
    columns: tuple = ()

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float).copy()
        theta = np.ones_like(beta) if self.theta is None else np.asarray(self.theta, dtype=float).copy()
        if beta.shape != theta.shape or beta.ndim != 1:
            raise ValueError("beta and theta must be vectors of equal length")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "columns", tuple(int(c) for c in self.columns))

    @classmethod
    def zeros(cls, J: int) -> "ControlCoefficients":
        return cls(np.zeros(J))


def _mean_and_var(terms: np.ndarray, ddof_extra: int = 0) -> tuple[float, float]:
    n = terms.size
    mean = math.fsum(terms) / n
    dof = n - 1 - ddof_extra
    if dof <= 0:
        return mean, 0.0
    dev = terms - mean
    return mean, math.fsum(dev * dev) / dof


def _check_positive(q: np.ndarray, what: str = "proposal") -> None:
    bad = np.nonzero(~(q > 0))[0]
    if bad.size:
        raise ZeroDensityAtSample(f"{what} density is zero at sample {int(bad[0])}")


def importance_estimate(f, p, q, method: str = "is") -> EstimateReport:
    """Plain importance sampling ``mean(f p / q)`` for points drawn from ``q``."""
    f, p, q = (np.asarray(a, dtype=float) for a in (f, p, q))
    _check_positive(q)
    terms = f * p / q
    mean, var = _mean_and_var(terms)
    return EstimateReport(mean, var / terms.size, terms.size, method)


def mixture_estimate(samples: WeightedSample, alpha=None) -> EstimateReport:
    """``mean(f p / q_alpha)``; the per-point weight ignores the stratum."""
    qa = samples.q_alpha(alpha)
    _check_positive(qa, "mixture")
    return importance_estimate(samples.f, samples.p, qa, method="mixture")


def control_design(samples: WeightedSample, kind: Kind, alpha=None, theta=None):
    """Response ``f p / q_alpha`` and the centred control features.

    ``hat``:   ``(h_j - theta_j) p / q_alpha``
    ``tilde``: ``h_j p / q_alpha - theta_j``

    ``h_j p`` is ``q_j`` wherever ``p > 0`` and zero elsewhere.
    """
    qa = samples.q_alpha(alpha)
    _check_positive(qa, "mixture")
    theta = np.ones(samples.J) if theta is None else np.asarray(theta, dtype=float)
    hp = np.where(samples.p[:, None] > 0, samples.q, 0.0)
    y = samples.f * samples.p / qa
    if kind == "hat":
        X = (hp - samples.p[:, None] * theta) / qa[:, None]
    elif kind == "tilde":
        X = hp / qa[:, None] - theta
    else:
        raise ValueError(f"unknown estimator kind {kind!r}")
    return y, X


def cv_estimate(kind: Kind, samples: WeightedSample, coeffs: ControlCoefficients, alpha=None) -> EstimateReport:
    """Mixture importance sampling with density-ratio control variates.

    ``tilde`` is ``mean((f - beta.h) p / q_alpha) + beta.theta``;
    ``hat`` is ``mean((f - beta.(h - theta)) p / q_alpha)``.

    The variance estimate is the least-squares standard error of the
    intercept in the regression of ``f p / q_alpha`` on the control
    features, with the fitted columns taken from ``coeffs.columns``.
    """
    beta, theta = coeffs.beta, coeffs.theta
    if beta.size != samples.J:
        raise ValueError("coefficient length must match the number of proposals")
    qa = samples.q_alpha(alpha)
    _check_positive(qa, "mixture")
    fp = samples.f * samples.p
    bq = np.where(samples.p > 0, samples.q @ beta, 0.0)
    if kind == "tilde":
        terms = (fp - bq) / qa
        shift = float(beta @ theta)
    elif kind == "hat":
        terms = (fp - bq + float(beta @ theta) * samples.p) / qa
        shift = 0.0
    else:
        raise ValueError(f"unknown estimator kind {kind!r}")

    n = terms.size
    k = len(coeffs.columns)
    mean, s2 = _mean_and_var(terms, ddof_extra=k)
    leverage = 1.0
    if k:
        _, X = control_design(samples, kind, alpha, theta)
        Xk = X[:, list(coeffs.columns)]
        xbar = Xk.mean(axis=0)
        Xc = Xk - xbar
        gram_pinv = np.linalg.pinv(Xc.T @ Xc, rcond=n * np.finfo(float).eps, hermitian=True)
        leverage += n * float(xbar @ gram_pinv @ xbar)
    return EstimateReport(mean + shift, s2 * leverage / n, n, f"cv_{kind}")


def gamma_from_beta(beta, alpha) -> np.ndarray:
    """Slopes for the ``hat`` form that reproduce a ``tilde`` estimate.

    ``gamma_j = beta_j - alpha_j * sum(beta)``; exact when ``theta = 1`` and
    ``alpha`` sums to one.
    """
    beta = np.asarray(beta, dtype=float)
    a = as_weights(alpha)
    return beta - a * beta.sum()


# --- multiple importance sampling -----------------------------------------


@dataclass(frozen=True)
class PartitionOfUnity:
    """Weights ``omega_j(x)`` splitting each point's contribution across strata.

    ``kind`` is one of ``balance``, ``power`` (exponent ``r``), ``indicator``
    (all weight on component ``index``) or ``custom`` (``weight_fn(samples,
    counts)`` returning an ``(n, J)`` array).
    """

    kind: str = "balance"
    r: float = 2.0
    index: int | None = None
    weight_fn: Callable | None = None

    @classmethod
    def balance(cls):
        return cls("balance")

    @classmethod
    def power(cls, r: float = 2.0):
        return cls("power", r=r)

    @classmethod
    def indicator(cls, j: int):
        return cls("indicator", index=j)

    @classmethod
    def custom(cls, fn: Callable):
        return cls("custom", weight_fn=fn)

    def weights(self, samples: WeightedSample, counts: np.ndarray) -> np.ndarray:
        q = samples.q
        if self.kind == "balance":
            nq = q * counts
            return nq / nq.sum(axis=1, keepdims=True)
        if self.kind == "power":
            # Veach's form (n_j q_j)^r; r = 1 recovers the balance heuristic
            nq = (q * counts) ** self.r
            return nq / nq.sum(axis=1, keepdims=True)
        if self.kind == "indicator":
            w = np.zeros_like(q)
            w[:, self.index] = 1.0
            return w
        if self.kind == "custom":
            return np.asarray(self.weight_fn(samples, counts), dtype=float)
        raise ValueError(f"unknown partition kind {self.kind!r}")

    def check(self, samples: WeightedSample, omega: np.ndarray, tol: float = 1e-12) -> None:
        live = samples.p > 0
        if not np.allclose(omega[live].sum(axis=1), 1.0, rtol=0, atol=tol):
            raise PartitionError("weights do not sum to one where p > 0")
        if np.any(omega[samples.q == 0] != 0):
            raise PartitionError("nonzero weight where the component density vanishes")


def multiple_is_estimate(samples: WeightedSample, omega: PartitionOfUnity, counts=None) -> EstimateReport:
    """Veach's multiple importance sampling estimator.

    ``samples.stratum[i]`` names the component each point was drawn from and
    ``counts[j]`` is the number of draws from ``q_j`` (inferred from the
    strata when omitted).  For the balance heuristic the coefficient of
    ``f(x)`` is ``p(x) / (n q_alpha(x))`` with ``alpha = counts / n``, so the
    result coincides with stratified :func:`mixture_estimate`.
    """
    J = samples.J
    if counts is None:
        counts = np.bincount(samples.stratum[samples.stratum >= 0], minlength=J)
    counts = np.asarray(counts)
    n = int(counts.sum())
    if n != len(samples) or np.any(samples.stratum < 0):
        raise ValueError("every sample needs a stratum and counts must match the batch")

    if omega.kind == "balance":
        alpha = counts / n
        qa = samples.q @ alpha
        _check_positive(qa, "mixture")
        terms = samples.f * samples.p / qa
        mean = math.fsum(terms) / n
        var = 0.0
        for j, idx in enumerate(samples.by_stratum()):
            if idx.size > 1:
                _, vj = _mean_and_var(terms[idx])
                var += (counts[j] / n) ** 2 * vj / counts[j]
        return EstimateReport(mean, var, n, "mis_balance")

    w = omega.weights(samples, counts)
    omega.check(samples, w)
    parts, var = [], 0.0
    for j, idx in enumerate(samples.by_stratum()):
        if idx.size == 0:
            if np.any(w[:, j] != 0):
                raise ValueError(f"stratum {j} has weight but no samples")
            continue
        qj = samples.q[idx, j]
        _check_positive(qj)
        terms = w[idx, j] * samples.f[idx] * samples.p[idx] / qj
        mj, vj = _mean_and_var(terms)
        parts.append(mj)
        var += vj / idx.size
    return EstimateReport(math.fsum(parts), var, n, f"mis_{omega.kind}")
