"""Density models, seeded sampling and the density-ratio control features.

Every model exposes ``dim``, ``logpdf(X)``, ``pdf(X)`` and ``sample(n, rng)``
with ``X`` of shape ``(n, dim)``.  Draws from a mixture are returned as a
:class:`WeightedSample` batch carrying ``p(x)``, every ``q_j(x)`` and ``f(x)``,
so estimators never re-evaluate a density.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from .simplex import MixtureWeights, as_weights


class DimensionMismatch(ValueError):
    pass


class DensityModel(Protocol):
    dim: int

    def logpdf(self, X: np.ndarray) -> np.ndarray: ...

    def pdf(self, X: np.ndarray) -> np.ndarray: ...

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray: ...


def _as_points(X, dim: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1) if dim > 1 or X.size == 1 else X.reshape(-1, 1)
    if X.ndim != 2 or X.shape[1] != dim:
        raise DimensionMismatch(f"expected points of dimension {dim}, got shape {np.shape(X)}")
    return X


class GaussianDensity:
    """Multivariate normal ``N(mean, cov)``, factored once at construction."""

    def __init__(self, mean, cov):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float)).copy()
        d = self.mean.size
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 0:
            cov = float(cov) * np.eye(d)
        if cov.shape != (d, d):
            raise DimensionMismatch(f"covariance shape {cov.shape} does not match mean of length {d}")
        if not np.allclose(cov, cov.T):
            raise ValueError("covariance must be symmetric")
        try:
            self._chol = linalg.cholesky(cov, lower=True)
        except linalg.LinAlgError as exc:
            raise ValueError("covariance is not positive definite") from exc
        self.cov = cov.copy()
        self.dim = d
        self._log_norm = -0.5 * d * np.log(2 * np.pi) - np.sum(np.log(np.diag(self._chol)))
        for arr in (self.mean, self.cov, self._chol):
            arr.setflags(write=False)

    @classmethod
    def isotropic(cls, mean, variance: float) -> "GaussianDensity":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        return cls(mean, variance * np.eye(mean.size))

    def logpdf(self, X) -> np.ndarray:
        X = _as_points(X, self.dim)
        z = linalg.solve_triangular(self._chol, (X - self.mean).T, lower=True, check_finite=False)
        return self._log_norm - 0.5 * np.einsum("ij,ij->j", z, z)

    def pdf(self, X) -> np.ndarray:
        return np.exp(self.logpdf(X))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal((n, self.dim))
        return self.mean + z @ self._chol.T

    def same_as(self, other) -> bool:
        return (
            isinstance(other, GaussianDensity)
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.cov, other.cov)
        )

    def __repr__(self):
        return f"GaussianDensity(mean={self.mean.tolist()}, cov=<{self.dim}x{self.dim}>)"


class DiscreteDensity:
    """A pmf on finitely many real atoms (one-dimensional points)."""

    dim = 1

    def __init__(self, pmf, atoms=None):
        pmf = np.asarray(pmf, dtype=float).copy()
        if pmf.ndim != 1 or np.any(pmf < 0):
            raise ValueError("pmf must be a nonnegative vector")
        if abs(pmf.sum() - 1.0) > 1e-12:
            raise ValueError(f"pmf sums to {pmf.sum()!r}")
        atoms = np.arange(pmf.size, dtype=float) if atoms is None else np.asarray(atoms, dtype=float).copy()
        if atoms.shape != pmf.shape or np.unique(atoms).size != atoms.size:
            raise ValueError("atoms must be distinct and match the pmf")
        self.pmf = pmf
        self.atoms = atoms
        self._order = np.argsort(atoms)
        pmf.setflags(write=False)
        atoms.setflags(write=False)

    def pdf(self, X) -> np.ndarray:
        x = _as_points(X, 1)[:, 0]
        sorted_atoms = self.atoms[self._order]
        pos = np.clip(np.searchsorted(sorted_atoms, x), 0, self.atoms.size - 1)
        hit = sorted_atoms[pos] == x
        return np.where(hit, self.pmf[self._order][pos], 0.0)

    def logpdf(self, X) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(X))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.choice(self.pmf.size, size=n, p=self.pmf)
        return self.atoms[idx].reshape(-1, 1)

    def same_as(self, other) -> bool:
        return (
            isinstance(other, DiscreteDensity)
            and np.array_equal(self.pmf, other.pmf)
            and np.array_equal(self.atoms, other.atoms)
        )


def density_at(model: DensityModel, x) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1 or x.size != model.dim:
        raise DimensionMismatch(f"point of length {x.size} for a {model.dim}-dimensional model")
    return float(model.pdf(x.reshape(1, -1))[0])


def draw(model: DensityModel, n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n == 0:
        return np.empty((0, model.dim))
    return model.sample(n, rng)


# --- random streams -------------------------------------------------------


def stream(seed: int, *path: int) -> np.random.Generator:
    """Counter-based generator for the node ``seed/path[0]/path[1]/...``.

    Children are addressed by index rather than by draw order, so a replicate
    or stratum gets the same numbers no matter which thread runs it.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in path))
    return np.random.Generator(np.random.Philox(ss))


# --- proposal families ----------------------------------------------------


@dataclass(frozen=True)
class ProposalFamily:
    """Nominal density ``p`` and the ordered proposals ``q_1..q_J``.

    ``defensive_index`` is 0-based.  When set, that proposal must evaluate to
    ``p``; this is spot-checked at construction.
    """

    nominal: DensityModel
    proposals: tuple
    defensive_index: int | None = None
    labels: tuple | None = None

    def __post_init__(self):
        props = tuple(self.proposals)
        object.__setattr__(self, "proposals", props)
        if not props:
            raise ValueError("need at least one proposal")
        for q in props:
            if q.dim != self.nominal.dim:
                raise DimensionMismatch("proposal and nominal dimensions differ")
        if self.labels is not None:
            labels = tuple(self.labels)
            if len(labels) != len(props):
                raise ValueError("one label per proposal")
            object.__setattr__(self, "labels", labels)
        if self.defensive_index is not None:
            j = self.defensive_index
            if not 0 <= j < len(props):
                raise IndexError(f"defensive index {j} out of range")
            pts = self.nominal.sample(16, np.random.default_rng(12345))
            if not np.allclose(props[j].pdf(pts), self.nominal.pdf(pts), rtol=1e-12, atol=0):
                raise ValueError(f"proposal {j} is not identical to the nominal density")

    @property
    def J(self) -> int:
        return len(self.proposals)

    @property
    def dim(self) -> int:
        return self.nominal.dim

    def log_densities(self, X) -> np.ndarray:
        """``(n, J)`` matrix of ``log q_j(x_i)``."""
        X = _as_points(X, self.dim)
        out = np.empty((X.shape[0], self.J))
        for j, q in enumerate(self.proposals):
            out[:, j] = q.logpdf(X)
        return out

    def densities(self, X) -> np.ndarray:
        return np.exp(self.log_densities(X))


def mixture_density(family: ProposalFamily, alpha, x) -> float | np.ndarray:
    """``q_alpha(x) = sum_j alpha_j q_j(x)``, accumulated in log space.

    A single point returns a float; an ``(n, d)`` array returns a vector.
    """
    a = as_weights(alpha)
    if a.size != family.J:
        raise DimensionMismatch(f"alpha has length {a.size}, family has J={family.J}")
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1 and (family.dim > 1 or x.size == 1)
    if single and x.size != family.dim:
        raise DimensionMismatch(f"point of length {x.size} for a {family.dim}-dimensional family")
    logq = family.log_densities(x.reshape(1, -1) if single else x)
    with np.errstate(divide="ignore"):
        out = np.exp(logsumexp(logq + np.log(a), axis=1))
    return float(out[0]) if single else out


def control_features(family: ProposalFamily, p: DensityModel, X) -> np.ndarray:
    """``h_j(x) = q_j(x)/p(x)`` where ``p(x) > 0`` and 0 elsewhere."""
    X = np.asarray(X, dtype=float)
    single = X.ndim <= 1 and (family.dim > 1 or X.size == 1)
    X = _as_points(X.reshape(1, -1) if single else X, family.dim)
    logq = family.log_densities(X)
    logp = p.logpdf(X)
    h = np.zeros_like(logq)
    pos = np.isfinite(logp)
    h[pos] = np.exp(logq[pos] - logp[pos, None])
    return h[0] if single else h


def stratified_allocation(alpha, n: int) -> np.ndarray:
    """Largest-remainder rounding of ``n * alpha`` to integer counts summing to ``n``."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    a = as_weights(alpha)
    target = n * a
    counts = np.floor(target).astype(int)
    short = n - int(counts.sum())
    if short > 0:
        # stable sort keeps ties in index order
        order = np.argsort(-(target - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


# --- sample batches -------------------------------------------------------


@dataclass(frozen=True)
class WeightedSample:
    """A batch of drawn points with every density evaluation cached.

    Stored column-wise: row ``i`` is one draw ``x_i`` with ``f(x_i)``,
    ``p(x_i)``, ``q_j(x_i)`` for all ``j`` and its originating stratum
    (``-1`` for iid mixture draws).  ``alpha`` is the mixture the batch is
    distributed as; for stratified draws it is ``counts / n``, not the
    requested weights.
    """

    points: np.ndarray
    f: np.ndarray
    p: np.ndarray
    q: np.ndarray
    stratum: np.ndarray
    alpha: np.ndarray
    defensive_index: int | None = None
    stratified: bool = False
    counts: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        n = self.f.shape[0]
        if self.q.ndim != 2 or self.q.shape[0] != n or self.p.shape != (n,):
            raise ValueError("inconsistent sample arrays")
        if self.alpha.shape != (self.q.shape[1],):
            raise ValueError("alpha must have one entry per proposal")

    def __len__(self) -> int:
        return self.f.shape[0]

    @property
    def n(self) -> int:
        return len(self)

    @property
    def J(self) -> int:
        return self.q.shape[1]

    def q_alpha(self, alpha=None) -> np.ndarray:
        a = self.alpha if alpha is None else as_weights(alpha)
        return self.q @ a

    def by_stratum(self) -> list[np.ndarray]:
        """Row indices of each stratum, in component order."""
        return [np.nonzero(self.stratum == j)[0] for j in range(self.J)]


def evaluate_sample(
    family: ProposalFamily,
    X: np.ndarray,
    f: Callable[[np.ndarray], np.ndarray] | None,
    alpha,
    stratum=None,
    stratified: bool = False,
    counts=None,
) -> WeightedSample:
    X = _as_points(X, family.dim)
    n = X.shape[0]
    q = family.densities(X)
    p = family.nominal.pdf(X)
    if family.defensive_index is not None:
        # the defensive column is p by construction; copying it keeps q_def - p exactly zero
        q[:, family.defensive_index] = p
    fx = np.zeros(n) if f is None else np.asarray(f(X), dtype=float).reshape(n)
    strat = np.full(n, -1, dtype=int) if stratum is None else np.asarray(stratum, dtype=int)
    return WeightedSample(
        points=X,
        f=fx,
        p=p,
        q=q,
        stratum=strat,
        alpha=np.asarray(as_weights(alpha), dtype=float).copy(),
        defensive_index=family.defensive_index,
        stratified=stratified,
        counts=None if counts is None else np.asarray(counts),
    )


def draw_mixture(
    family: ProposalFamily,
    alpha,
    n: int,
    rng: np.random.Generator | int | tuple,
    f: Callable[[np.ndarray], np.ndarray] | None = None,
    stratified: bool = True,
) -> WeightedSample:
    """Draw ``n`` points from the ``alpha`` mixture of ``family``.

    Stratified draws take ``stratified_allocation(alpha, n)[j]`` points from
    ``q_j``; each component uses its own child stream when ``rng`` is a seed
    or seed path.  Unstratified draws pick components iid from ``alpha``.
    """
    path = _seed_path(rng)
    a = as_weights(alpha)
    if a.size != family.J:
        raise DimensionMismatch(f"alpha has length {a.size}, family has J={family.J}")
    if stratified:
        counts = stratified_allocation(a, n)
        chunks, labels = [], []
        for j, (q, nj) in enumerate(zip(family.proposals, counts)):
            if nj == 0:
                continue
            g = rng if path is None else stream(*path, j)
            chunks.append(draw(q, int(nj), g))
            labels.append(np.full(nj, j))
        X = np.vstack(chunks) if chunks else np.empty((0, family.dim))
        strat = np.concatenate(labels) if labels else np.empty(0, dtype=int)
        eff = counts / n if n > 0 else a
        return evaluate_sample(family, X, f, eff, strat, stratified=True, counts=counts)

    g = rng if path is None else stream(*path)
    comp = g.choice(family.J, size=n, p=a / a.sum())
    X = np.empty((n, family.dim))
    for j in range(family.J):
        idx = np.nonzero(comp == j)[0]
        if idx.size:
            X[idx] = draw(family.proposals[j], idx.size, g)
    return evaluate_sample(family, X, f, a, comp, stratified=False)


def _seed_path(rng) -> tuple | None:
    if isinstance(rng, (int, np.integer)):
        return (int(rng),)
    if isinstance(rng, tuple):
        return rng
    return None


def concat_samples(parts: Sequence[WeightedSample]) -> WeightedSample:
    """Stack batches that share an ``alpha`` (e.g. strata drawn separately)."""
    first = parts[0]
    return WeightedSample(
        points=np.vstack([s.points for s in parts]),
        f=np.concatenate([s.f for s in parts]),
        p=np.concatenate([s.p for s in parts]),
        q=np.vstack([s.q for s in parts]),
        stratum=np.concatenate([s.stratum for s in parts]),
        alpha=first.alpha,
        defensive_index=first.defensive_index,
        stratified=first.stratified,
        counts=first.counts,
    )
