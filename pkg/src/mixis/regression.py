"""Least-squares control-variate slopes for the mixture estimators."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr

from .densities import WeightedSample
from .estimators import ControlCoefficients, Kind, control_design


class DegenerateDesignWarning(RuntimeWarning):
    """Every predictor column vanished; slopes fall back to zero."""


@dataclass(frozen=True)
class RegressionDesign:
    responses: np.ndarray
    predictors: np.ndarray
    dropped_columns: tuple


def build_design(samples: WeightedSample, kind: Kind, alpha=None, theta=None) -> RegressionDesign:
    y, X = control_design(samples, kind, alpha, theta)
    dropped = []
    if kind == "hat" and samples.defensive_index is not None:
        # (h_def - 1) p / q_alpha = (p - p) / q_alpha is identically zero
        dropped.append(samples.defensive_index)
    zero_cols = np.nonzero(~np.any(X != 0, axis=0))[0]
    dropped.extend(int(j) for j in zero_cols if j not in dropped)
    return RegressionDesign(y, X, tuple(sorted(dropped)))


def min_norm_lstsq(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, int]:
    """Minimum-norm least squares via the SVD.

    Singular values below ``eps * s_max * n`` count as zero.
    """
    n = X.shape[0]
    sol, _, rank, _ = np.linalg.lstsq(X, y, rcond=n * np.finfo(float).eps)
    return sol, int(rank)


def fit_control_coefficients(
    samples: WeightedSample, kind: Kind = "hat", alpha=None, theta=None
) -> ControlCoefficients:
    """Regress ``f p / q_alpha`` on the control features with an intercept.

    The intercept is left unpenalised by centring; slopes are the
    minimum-norm solution, so exactly collinear features (the ``tilde``
    features always satisfy ``sum_j alpha_j x_j = 0``) are handled without
    choosing a column to drop.  Dropped columns get slope zero.
    """
    J = samples.J
    theta = np.ones(J) if theta is None else np.asarray(theta, dtype=float)
    n = len(samples)
    if n <= J:
        raise ValueError(f"need more samples than components (n={n}, J={J})")
    design = build_design(samples, kind, alpha, theta)
    keep = [j for j in range(J) if j not in design.dropped_columns]
    beta = np.zeros(J)
    if not keep:
        warnings.warn("all control-variate columns are zero", DegenerateDesignWarning, stacklevel=2)
        return ControlCoefficients(beta, theta)
    X = design.predictors[:, keep]
    y = design.responses
    Xc = X - X.mean(axis=0)
    yc = y - y.mean()
    sol, rank = min_norm_lstsq(Xc, yc)
    if rank == 0:
        warnings.warn("control-variate design has rank zero", DegenerateDesignWarning, stacklevel=2)
        return ControlCoefficients(beta, theta)
    beta[keep] = sol
    # degrees of freedom follow the numerical rank, not the column count
    return ControlCoefficients(beta, theta, columns=_rank_columns(Xc, rank, keep))


def _rank_columns(Xc: np.ndarray, rank: int, keep: list) -> tuple:
    if rank == len(keep):
        return tuple(keep)
    _, _, piv = qr(Xc, mode="economic", pivoting=True)
    return tuple(sorted(keep[i] for i in piv[:rank]))
