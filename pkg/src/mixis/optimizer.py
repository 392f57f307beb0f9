"""Barrier solver for the quadratic-over-linear mixture criterion.

Minimise ``f0(alpha, beta) = sum_i (Y_i - X_i beta)^2 / (Z_i alpha)`` over
``beta`` free, ``alpha_j > eps_j`` and ``sum(alpha) < 1 + eta``.  The outer
loop shrinks the barrier weight ``rho`` by ``phi`` per round and the inner
loop is a damped Newton method with backtracking, warm started along the
central path.  Stopping when ``(J+1) rho`` is below ``eps_cert`` times the
objective certifies ``f0 <= (1 + eps_cert) * min f0``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .densities import WeightedSample
from .estimators import ZeroDensityAtSample
from .simplex import ConstraintSet, MixtureWeights, initial_interior_point, renormalize

log = logging.getLogger(__name__)


class NonPositiveDenominator(ValueError):
    pass


class InfeasiblePoint(ValueError):
    pass


class NumericalBreakdown(ArithmeticError):
    pass


class RankDeficientX(UserWarning):
    pass


@dataclass(frozen=True)
class ProblemData:
    """Solver input: responses ``Y``, regressors ``X`` (n x K), mixture rows ``Z`` (n x J).

    ``beta_components`` maps each column of ``X`` back to the proposal it came
    from (or -1 for user-supplied columns); ``pruned`` lists proposals whose
    columns were dropped to keep ``X`` of full column rank.
    """

    Y: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    constraints: ConstraintSet
    beta_components: tuple = ()
    pruned: tuple = ()

    def __post_init__(self):
        Y = np.asarray(self.Y, dtype=float).reshape(-1)
        n = Y.size
        X = np.asarray(self.X, dtype=float).reshape(n, -1) if np.size(self.X) else np.zeros((n, 0))
        Z = np.asarray(self.Z, dtype=float)
        if Z.shape != (n, self.constraints.J):
            raise ValueError(f"Z has shape {Z.shape}, expected ({n}, {self.constraints.J})")
        if np.any(Z < 0):
            raise ValueError("Z must be nonnegative")
        if np.any(~(Z > 0).any(axis=1)):
            raise ValueError("Z has an all-zero row")
        if X.shape[1] > n:
            raise ValueError("X has more columns than rows")
        comps = tuple(self.beta_components) or tuple(range(X.shape[1]))
        if len(comps) != X.shape[1]:
            raise ValueError("one beta component label per column of X")
        for arr in (Y, X, Z):
            arr.setflags(write=False)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "beta_components", comps)
        object.__setattr__(self, "pruned", tuple(self.pruned))

    @property
    def n(self) -> int:
        return self.Y.size

    @property
    def J(self) -> int:
        return self.Z.shape[1]

    @property
    def K(self) -> int:
        return self.X.shape[1]

    def with_constraints(self, constraints: ConstraintSet) -> "ProblemData":
        return ProblemData(self.Y, self.X, self.Z, constraints, self.beta_components, self.pruned)


@dataclass(frozen=True)
class NewtonConfig:
    max_iters: int = 100
    decrement_tolerance: float = 1e-10
    gradient_tolerance: float = 1e-9
    line_search_shrink: float = 0.5
    line_search_slope: float = 0.01
    max_halvings: int = 60


@dataclass(frozen=True)
class BarrierConfig:
    """``rho_initial=None`` starts at ``f0(alpha0, 0) / (J + 1)``."""

    rho_initial: float | None = None
    reduction_factor: float = 2.0
    tolerance: float = 1e-4
    max_outer: int = 200
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    precondition: bool = True

    def __post_init__(self):
        if self.rho_initial is not None and not self.rho_initial > 0:
            raise ValueError("rho_initial must be positive")
        if not self.reduction_factor > 1:
            raise ValueError("reduction factor must exceed 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        nw = self.newton
        if not (0 < nw.line_search_slope <= 0.5 and 0 < nw.line_search_shrink < 1):
            raise ValueError("line search needs slope in (0, 0.5] and shrink in (0, 1)")


@dataclass
class Solution:
    alpha: MixtureWeights
    beta: np.ndarray
    objective: float
    certified: bool
    alpha_raw: np.ndarray
    gap: float
    status: str = "certified"
    iterations: list = field(default_factory=list)

    def beta_by_component(self, problem: ProblemData) -> np.ndarray:
        """Slopes scattered to a length-J vector (zeros for pruned/defensive)."""
        out = np.zeros(problem.J)
        for k, j in enumerate(problem.beta_components):
            if 0 <= j < problem.J:
                out[j] = self.beta[k]
        return out


# --- problem assembly ----------------------------------------------------


def independent_columns(X: np.ndarray, tol: float | None = None) -> np.ndarray:
    """Indices of a maximal linearly independent set of columns (pivoted QR)."""
    if X.shape[1] == 0:
        return np.arange(0)
    norms = np.linalg.norm(X, axis=0)
    nonzero = np.nonzero(norms > 0)[0]
    if nonzero.size == 0:
        return nonzero
    Xn = X[:, nonzero] / norms[nonzero]
    _, R, piv = linalg.qr(Xn, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(Xn.shape) * np.finfo(float).eps if tol is None else tol
    rank = int(np.count_nonzero(diag > tol * diag[0]))
    return np.sort(nonzero[piv[:rank]])


def assemble_problem(pilot: WeightedSample, constraints: ConstraintSet, use_cv: bool = True,
                     frequency=None, extra_controls=None) -> ProblemData:
    """Turn a pilot sample from ``q_{alpha'}`` into solver data.

    Row ``i`` carries ``w_i = 1 / q_{alpha'}(x_i)`` (times ``frequency[i]``
    when given, e.g. exact pmf weights for an exhaustive pilot):
    ``Y_i = f p sqrt(w_i)``, ``X_ij = (q_j - p) sqrt(w_i)`` and
    ``Z_ij = q_j(x_i)``.  The resulting ``f0`` is ``n`` times the sample
    mean-square criterion, with ``beta`` the slope of the ``hat`` estimator.
    The defensive column is identically zero and left out.
    """
    qa_pilot = pilot.q_alpha()
    if np.any(~(qa_pilot > 0)):
        raise ZeroDensityAtSample("pilot mixture density vanishes at a pilot point")
    w = 1.0 / qa_pilot
    if frequency is not None:
        w = w * np.asarray(frequency, dtype=float)
    sw = np.sqrt(w)
    Y = pilot.f * pilot.p * sw
    cols, comps = [], []
    if use_cv:
        for j in range(pilot.J):
            if j == pilot.defensive_index:
                continue
            cols.append((pilot.q[:, j] - pilot.p) * sw)
            comps.append(j)
    if extra_controls is not None:
        extra = np.asarray(extra_controls, dtype=float).reshape(len(pilot), -1)
        for c in extra.T:
            cols.append(c * sw)
            comps.append(-1)
    X = np.column_stack(cols) if cols else np.zeros((len(pilot), 0))
    pruned = ()
    if X.shape[1]:
        keep = independent_columns(X)
        if keep.size < X.shape[1]:
            drop = sorted(set(range(X.shape[1])) - set(keep.tolist()))
            pruned = tuple(comps[k] for k in drop)
            log.info("pruned %d dependent control columns", len(drop))
            X = X[:, keep]
            comps = [comps[k] for k in keep]
    return ProblemData(Y, X, pilot.q, constraints, tuple(comps), pruned)


# --- objective and barrier -------------------------------------------------


def objective(problem: ProblemData, alpha, beta=None) -> float:
    a = np.asarray(alpha.weights if isinstance(alpha, MixtureWeights) else alpha, dtype=float)
    s = problem.Z @ a
    if np.any(~(s > 0)):
        raise NonPositiveDenominator("Z alpha must be positive in every row")
    r = problem.Y if beta is None or problem.K == 0 else problem.Y - problem.X @ np.asarray(beta, dtype=float)
    return math.fsum(r * r / s)


def _slacks(c: ConstraintSet, alpha: np.ndarray):
    return alpha - c.floors, 1.0 + c.slack - alpha.sum()


def _feasible(c: ConstraintSet, alpha: np.ndarray) -> bool:
    lo, top = _slacks(c, alpha)
    return bool(np.all(lo > 0) and top > 0)


def barrier_value(problem: ProblemData, alpha, beta, rho: float) -> float:
    lo, top = _slacks(problem.constraints, alpha)
    if np.any(lo <= 0) or top <= 0:
        return math.inf
    s = problem.Z @ alpha
    r = problem.Y - problem.X @ beta if problem.K else problem.Y
    return float(np.dot(r, r / s)) - rho * (np.log(lo).sum() + math.log(top))


def barrier_value_grad_hess(problem: ProblemData, alpha, beta, rho: float):
    """Value, gradient and Hessian of ``f0 - rho * (sum log(alpha - eps) + log(1 + eta - sum alpha))``.

    Variables are ordered ``(alpha, beta)``.
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float).reshape(-1)
    lo, top = _slacks(problem.constraints, alpha)
    if np.any(lo <= 0) or top <= 0:
        raise InfeasiblePoint("barrier arguments must be positive")
    Z, X = problem.Z, problem.X
    J, K = problem.J, problem.K
    s = Z @ alpha
    r = problem.Y - X @ beta if K else problem.Y
    rs = r / s
    value = float(np.dot(r, rs)) - rho * (np.log(lo).sum() + math.log(top))

    g = np.empty(J + K)
    g[:J] = -(Z.T @ (rs * rs)) - rho / lo + rho / top
    H = np.empty((J + K, J + K))
    H[:J, :J] = (Z.T * (2.0 * rs * rs / s)) @ Z + rho / top**2
    H[:J, :J][np.diag_indices(J)] += rho / lo**2
    if K:
        g[J:] = -2.0 * (X.T @ rs)
        H[J:, J:] = (X.T * (2.0 / s)) @ X
        H[:J, J:] = (Z.T * (2.0 * rs / s)) @ X
        H[J:, :J] = H[:J, J:].T
    return value, g, H


def _sym_cond(H: np.ndarray) -> float:
    ev = np.abs(np.linalg.eigvalsh(H))
    lo = ev.min()
    return math.inf if lo == 0 else float(ev.max() / lo)


def precondition(H: np.ndarray, a: int, b: int) -> np.ndarray | None:
    """Diagonal scaling equalising the median magnitudes of the two Hessian blocks.

    Returns the diagonal of ``P`` (ones on the ``alpha`` block, ``p`` on the
    ``beta`` block) when ``P H P`` is better conditioned than ``H``, else None.
    """
    if b == 0:
        return None
    med_a = np.median(np.abs(H[:a, :a]))
    med_b = np.median(np.abs(H[a:a + b, a:a + b]))
    if not (med_a > 0 and med_b > 0):
        return None
    pval = math.sqrt(med_a / med_b)
    P = np.ones(a + b)
    P[a:] = pval
    if _sym_cond(P[:, None] * H * P[None, :]) < _sym_cond(H):
        return P
    return None


def _newton_direction(H: np.ndarray, g: np.ndarray, a: int, use_precond: bool):
    P = precondition(H, a, H.shape[0] - a) if use_precond else None
    Hs = H if P is None else P[:, None] * H * P[None, :]
    gs = g if P is None else P * g
    tau = 0.0
    base = 1e-12 * max(np.trace(Hs), 1e-300) / Hs.shape[0]
    for attempt in range(9):
        try:
            cf = linalg.cho_factor(Hs + tau * np.eye(Hs.shape[0]), lower=True, check_finite=False)
            y = -linalg.cho_solve(cf, gs, check_finite=False)
            if np.all(np.isfinite(y)):
                return (y if P is None else P * y), tau
        except linalg.LinAlgError:
            pass
        tau = base if tau == 0.0 else tau * 10.0
    raise NumericalBreakdown("Hessian not positive definite after regularisation")


def _center(problem: ProblemData, alpha, beta, rho, cfg: BarrierConfig):
    """Damped Newton minimisation of the barrier function at fixed ``rho``."""
    nw = cfg.newton
    J = problem.J
    steps = 0
    for steps in range(1, nw.max_iters + 1):
        val, g, H = barrier_value_grad_hess(problem, alpha, beta, rho)
        d, _ = _newton_direction(H, g, J, cfg.precondition)
        slope = float(g @ d)
        lam2 = -slope
        if lam2 / 2 <= nw.decrement_tolerance * rho or lam2 / 2 <= 1e-15 * abs(val):
            break
        if np.max(np.abs(g)) < nw.gradient_tolerance * (1.0 + abs(val)):
            break
        da, db = d[:J], d[J:]
        t = 1.0
        while not _feasible(problem.constraints, alpha + t * da):
            t *= nw.line_search_shrink
        for _ in range(nw.max_halvings):
            new = barrier_value(problem, alpha + t * da, beta + t * db, rho)
            if new <= val + nw.line_search_slope * t * slope:
                break
            t *= nw.line_search_shrink
        else:
            # no sufficient decrease representable in floating point
            break
        alpha = alpha + t * da
        beta = beta + t * db
    return alpha, beta, steps


def solve(problem: ProblemData, cfg: BarrierConfig | None = None) -> Solution:
    """Run the barrier method to a certified ``(1 + tolerance)``-optimal point."""
    cfg = cfg or BarrierConfig()
    c = problem.constraints
    J, K = problem.J, problem.K
    if K and np.linalg.matrix_rank(problem.X) < K:
        raise ValueError("X must have full column rank; prune dependent columns first")
    alpha0 = initial_interior_point(c)
    f_start = objective(problem, alpha0)
    if f_start == 0.0:
        return Solution(renormalize(alpha0), np.zeros(K), 0.0, True, alpha0, 0.0, "zero objective")

    # work on a copy scaled so f0(alpha0, 0) = 1 with unit-norm X columns;
    # the certificate is scale free and beta is mapped back at the end
    ys = 1.0 / math.sqrt(f_start)
    col = np.linalg.norm(problem.X, axis=0) * ys if K else np.zeros(0)
    col[col == 0] = 1.0
    scaled = ProblemData(problem.Y * ys, problem.X * ys / col if K else problem.X, problem.Z, c,
                         problem.beta_components, problem.pruned)

    alpha, beta = alpha0.copy(), np.zeros(K)
    rho = 1.0 / (J + 1) if cfg.rho_initial is None else cfg.rho_initial / f_start
    history = []
    certified = False
    status = "max_outer"
    f0 = 1.0
    gap = math.inf
    for _ in range(cfg.max_outer):
        alpha, beta, steps = _center(scaled, alpha, beta, rho, cfg)
        f0 = objective(scaled, alpha, beta)
        gap = (J + 1) * rho
        history.append({"rho": rho * f_start, "f0": f0 * f_start, "newton_steps": steps})
        # f0 - min <= gap, so gap <= tol * (f0 - gap) gives f0 <= (1 + tol) min
        if gap <= cfg.tolerance * (f0 - gap):
            certified, status = True, "certified"
            break
        rho /= cfg.reduction_factor
    if not certified:
        log.warning("barrier solver stopped without certificate (f0=%g, gap=%g)", f0 * f_start, gap * f_start)
    return Solution(
        alpha=renormalize(alpha),
        beta=beta / col if K else beta,
        objective=f0 * f_start,
        certified=certified,
        alpha_raw=alpha,
        gap=gap * f_start,
        status=status,
        iterations=history,
    )


# --- problem files -----------------------------------------------------------

PROBLEM_MAGIC = "#mixis-problem"


def _fmt(x: float) -> str:
    return repr(float(x))


def dump_problem(problem: ProblemData, path) -> None:
    """Write a tab-separated, self-describing problem file."""
    n, J, K = problem.n, problem.J, problem.K
    c = problem.constraints
    lines = [
        f"{PROBLEM_MAGIC}\t1",
        "\t".join(["n", "J", "K", "eta"] + [f"eps_{j + 1}" for j in range(J)]),
        "\t".join([str(n), str(J), str(K), _fmt(c.slack)] + [_fmt(e) for e in c.floors]),
        "\t".join(["beta_component"] + [str(j) for j in problem.beta_components]),
        "\t".join(["Y"] + [f"X_{k + 1}" for k in range(K)] + [f"Z_{j + 1}" for j in range(J)]),
    ]
    for i in range(n):
        row = [problem.Y[i], *problem.X[i], *problem.Z[i]]
        lines.append("\t".join(_fmt(v) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_problem(path) -> ProblemData:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    head = lines[0].split("\t")
    if head[0] != PROBLEM_MAGIC:
        raise ValueError(f"{path}: not a problem file")
    if head[1] != "1":
        raise ValueError(f"{path}: unsupported problem file version {head[1]}")
    vals = lines[2].split("\t")
    n, J, K = int(vals[0]), int(vals[1]), int(vals[2])
    eta = float(vals[3])
    floors = np.array([float(v) for v in vals[4:4 + J]])
    comps = tuple(int(v) for v in lines[3].split("\t")[1:])
    body = np.array([[float(v) for v in ln.split("\t")] for ln in lines[5:5 + n]]).reshape(n, 1 + K + J)
    return ProblemData(body[:, 0], body[:, 1:1 + K], body[:, 1 + K:], ConstraintSet(floors, eta), comps)
