"""Exact moments of every estimator on a finite sample space.

On a discrete space each integral is a finite sum over atoms, so means,
variances and optimal control-variate slopes can be computed exactly (up to
rounding, which :func:`math.fsum` keeps honest).  These serve as ground
truth for the sampling code and the optimizer.

Variances are per-sample (``n = 1``) unless stated otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .simplex import as_weights


class SupportViolation(ValueError):
    pass


def _fsum(a) -> float:
    return math.fsum(np.ravel(a))


@dataclass(frozen=True)
class DiscreteSpace:
    """``M`` atoms with nominal pmf ``p``, proposal pmfs ``q`` (``J x M``) and integrand ``f``."""

    p: np.ndarray
    q: np.ndarray
    f: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float).copy()
        q = np.atleast_2d(np.asarray(self.q, dtype=float)).copy()
        f = np.asarray(self.f, dtype=float).copy()
        if p.ndim != 1 or q.shape[1] != p.size or f.shape != p.shape:
            raise ValueError("p, q and f must agree on the number of atoms")
        for name, pmf in [("p", p), *((f"q[{j}]", row) for j, row in enumerate(q))]:
            if np.any(pmf < 0) or abs(_fsum(pmf) - 1.0) > 1e-12:
                raise ValueError(f"{name} is not a pmf")
        for arr in (p, q, f):
            arr.setflags(write=False)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "f", f)

    @property
    def M(self) -> int:
        return self.p.size

    @property
    def J(self) -> int:
        return self.q.shape[0]

    def q_alpha(self, alpha) -> np.ndarray:
        return as_weights(alpha) @ self.q

    def supports_ok(self, alpha=None) -> bool:
        """Support conditions: ``p > 0`` wherever some ``q_j > 0``, and ``q_alpha > 0`` wherever ``p > 0``."""
        if np.any((self.q > 0).any(axis=0) & (self.p == 0)):
            return False
        if alpha is None:
            return True
        return not np.any((self.p > 0) & (self.q_alpha(alpha) == 0))

    def with_f(self, f) -> "DiscreteSpace":
        return DiscreteSpace(self.p, self.q, f)


def exact_mu(space: DiscreteSpace) -> float:
    return _fsum(space.f * space.p)


def exact_theta(space: DiscreteSpace) -> np.ndarray:
    """``E_p[h_j]`` with ``h_j = q_j / p`` on ``{p > 0}``; equals 1 under the support conditions."""
    live = space.p > 0
    return np.array([_fsum(row[live]) for row in space.q])


def _cv_numerator(space: DiscreteSpace, qa: np.ndarray, beta, kind: str, theta=None) -> np.ndarray:
    """``q_alpha * g`` where ``g`` is the per-draw term of the estimator."""
    fp = space.f * space.p
    if beta is None:
        return fp
    beta = np.asarray(beta, dtype=float)
    theta = exact_theta(space) if theta is None else np.asarray(theta, dtype=float)
    hp = np.where(space.p > 0, space.q, 0.0)
    bhp = beta @ hp
    bt = float(beta @ theta)
    if kind == "hat":
        return fp - bhp + bt * space.p
    if kind == "tilde":
        return fp - bhp + bt * qa
    raise ValueError(f"unknown estimator kind {kind!r}")


def _iid_variance(num: np.ndarray, q: np.ndarray, mu: float) -> float:
    """``sum over {q > 0} of (num - mu q)^2 / q``; ``num`` must vanish off the support."""
    live = q > 0
    if np.any(num[~live] != 0):
        raise SupportViolation("integrand is nonzero where the sampling density vanishes")
    r = num[live] - mu * q[live]
    return _fsum(r * r / q[live])


def _stratified_variance(num: np.ndarray, qa: np.ndarray, space: DiscreteSpace, alpha: np.ndarray) -> float:
    """``sum_j alpha_j Var_{q_j}(g)`` with ``g = num / q_alpha``."""
    live = qa > 0
    if np.any(num[~live] != 0):
        raise SupportViolation("integrand is nonzero where the mixture density vanishes")
    g = np.zeros_like(num)
    g[live] = num[live] / qa[live]
    total = []
    for j in range(space.J):
        if alpha[j] == 0:
            continue
        qj = space.q[j]
        mj = _fsum(qj * g)
        d = g - mj
        total.append(alpha[j] * _fsum(qj * d * d))
    return math.fsum(total)


def exact_variance(space: DiscreteSpace, method: str = "plain", *, q=None, alpha=None, beta=None,
                   kind: str = "hat", omega=None, counts=None, theta=None) -> float:
    """Exact per-sample variance of an estimator.

    ``method`` is one of

    - ``plain``: ``x ~ p``, estimate ``mean(f)``
    - ``is``: single proposal pmf ``q``
    - ``mixture``: iid from ``q_alpha``
    - ``mixture_cv``: iid from ``q_alpha`` with slopes ``beta`` (``kind`` hat/tilde)
    - ``stratified`` / ``stratified_cv``: ``n alpha_j`` draws from each ``q_j``
    - ``multiple_is``: partition weights ``omega`` (``J x M``) and ``counts``;
      returned as ``n * Var`` with ``n = sum(counts)``.
    """
    mu = exact_mu(space)
    if method == "plain":
        d = space.f - mu
        return _fsum(space.p * d * d)
    if method == "is":
        return _iid_variance(space.f * space.p, np.asarray(q, dtype=float), mu)
    if method in ("mixture", "mixture_cv", "stratified", "stratified_cv"):
        a = np.asarray(as_weights(alpha), dtype=float)
        qa = a @ space.q
        num = _cv_numerator(space, qa, beta if method.endswith("_cv") else None, kind, theta)
        if method.startswith("mixture"):
            return _iid_variance(num, qa, mu)
        return _stratified_variance(num, qa, space, a)
    if method == "multiple_is":
        omega = np.asarray(omega, dtype=float)
        counts = np.asarray(counts)
        n = int(counts.sum())
        fp = space.f * space.p
        total = []
        for j in range(space.J):
            qj = space.q[j]
            live = qj > 0
            if np.any((omega[j] * fp)[~live] != 0):
                raise SupportViolation(f"partition weight {j} is nonzero off the support of q_{j}")
            if counts[j] == 0:
                if np.any(omega[j] * fp != 0):
                    raise SupportViolation(f"stratum {j} carries weight but has no draws")
                continue
            g = np.zeros_like(fp)
            g[live] = omega[j][live] * fp[live] / qj[live]
            mj = _fsum(qj * g)
            d = g - mj
            total.append(_fsum(qj * d * d) / counts[j])
        return n * math.fsum(total)
    raise ValueError(f"unknown method {method!r}")


def exact_mean_square(space: DiscreteSpace, alpha, beta=None, kind: str = "hat") -> float:
    """``sigma^2_{alpha,beta} + mu^2`` via the mean-square form ``sum num^2 / q_alpha``."""
    qa = space.q_alpha(alpha)
    num = _cv_numerator(space, qa, beta, kind)
    live = qa > 0
    if np.any(num[~live] != 0):
        raise SupportViolation("integrand is nonzero where the mixture density vanishes")
    return _fsum(num[live] ** 2 / qa[live])


def exact_control_features(space: DiscreteSpace, alpha, kind: str = "hat", theta=None):
    """Per-atom response ``f p / q_alpha`` and control features on ``{q_alpha > 0}``."""
    qa = space.q_alpha(alpha)
    live = qa > 0
    theta = exact_theta(space) if theta is None else np.asarray(theta, dtype=float)
    hp = np.where(space.p > 0, space.q, 0.0)[:, live].T
    y = (space.f * space.p)[live] / qa[live]
    if kind == "hat":
        X = (hp - np.outer(space.p[live], theta)) / qa[live, None]
    elif kind == "tilde":
        X = hp / qa[live, None] - theta
    else:
        raise ValueError(f"unknown estimator kind {kind!r}")
    return y, X, qa[live]


def exact_optimal_beta(space: DiscreteSpace, alpha, kind: str = "hat"):
    """Variance-minimising slopes under iid ``q_alpha`` sampling and the minimum.

    Solves the ``q_alpha``-weighted least-squares regression of
    ``f p / q_alpha`` on the control features with an intercept; the
    minimum-norm solution is returned when the features are collinear.
    """
    a = np.asarray(as_weights(alpha), dtype=float)
    qa = a @ space.q
    if np.any((space.f * space.p != 0) & (qa == 0)) or not space.supports_ok(a):
        raise SupportViolation("support conditions fail for this alpha")
    y, X, w = exact_control_features(space, a, kind)
    sw = np.sqrt(w)
    A = np.column_stack([sw, X * sw[:, None]])
    sol, *_ = np.linalg.lstsq(A, y * sw, rcond=A.shape[0] * np.finfo(float).eps)
    beta = sol[1:]
    return beta, exact_variance(space, "mixture_cv", alpha=a, beta=beta, kind=kind)


def component_variances(space: DiscreteSpace) -> np.ndarray:
    """``sigma^2_{q_j}`` for each proposal, ``inf`` where ``q_j`` misses ``f p``."""
    out = np.empty(space.J)
    for j in range(space.J):
        try:
            out[j] = exact_variance(space, "is", q=space.q[j])
        except SupportViolation:
            out[j] = np.inf
    return out


def component_cv_variances(space: DiscreteSpace, kind: str = "hat") -> np.ndarray:
    """``min_beta sigma^2_{q_j, beta}`` for each proposal used alone."""
    out = np.empty(space.J)
    for j in range(space.J):
        e = np.zeros(space.J)
        e[j] = 1.0
        try:
            out[j] = exact_optimal_beta(space, e, kind)[1]
        except SupportViolation:
            out[j] = np.inf
    return out


def random_space(rng: np.random.Generator, M: int, J: int, *, defensive: bool = False,
                 zero_frac: float = 0.0, nominal_zero_frac: float = 0.0, f_scale: float = 1.0) -> DiscreteSpace:
    """Random space satisfying the support conditions for every interior ``alpha``.

    ``zero_frac`` blanks a share of each proposal's atoms (never all of the
    union); ``nominal_zero_frac`` gives ``p`` atoms of zero mass, which every
    proposal then also avoids.  With ``defensive`` the first proposal is ``p``.
    """
    p_live = rng.random(M) >= nominal_zero_frac
    if not p_live.any():
        p_live[rng.integers(M)] = True
    p = np.where(p_live, rng.gamma(1.0, size=M), 0.0)
    p /= p.sum()
    q = np.empty((J, M))
    for j in range(J):
        mask = p_live & (rng.random(M) >= zero_frac)
        if not mask.any():
            mask[rng.choice(np.nonzero(p_live)[0])] = True
        row = np.where(mask, rng.gamma(0.7, size=M), 0.0)
        q[j] = row / row.sum()
    if defensive:
        q[0] = p
    else:
        uncovered = p_live & ~(q > 0).any(axis=0)
        if uncovered.any():
            q[-1, uncovered] = rng.gamma(0.7, size=uncovered.sum())
            q[-1] /= q[-1].sum()
    f = f_scale * rng.normal(size=M) + rng.normal()
    return DiscreteSpace(p, q, f)


def random_interior_alpha(rng: np.random.Generator, J: int, floor: float = 1e-3) -> np.ndarray:
    a = rng.dirichlet(np.ones(J)) + floor
    return a / a.sum()
