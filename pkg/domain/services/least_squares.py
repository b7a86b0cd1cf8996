"""
Deterministic least-squares core.

Aliased columns are detected with column-pivoted QR and dropped (relative pivot tolerance
`RANK_TOLERANCE`); inference uses conventional homoskedastic errors and Student-t p-values.
The residual standard deviation is floored at `SIGMA_FLOOR` x max(1, rms(y)) so exact fits
keep finite, positive standard errors.
"""
import logging
from dataclasses import dataclass
from typing import AbstractSet, List, Tuple

import numpy as np
from scipy import linalg, stats

from domain.model.aggregates.design_matrix import DesignMatrix
from domain.model.aggregates.fit_result import FitResult
from domain.model.exceptions import DegreesOfFreedomError, InputError, ProvenanceError

logger = logging.getLogger(__name__)

RANK_TOLERANCE = 1e-10
SIGMA_FLOOR = 1e-9


def response_scale(y: np.ndarray) -> float:
    return max(1.0, float(np.sqrt(np.mean(np.square(y))))) if len(y) else 1.0


def pivoted_rank(matrix: np.ndarray, tolerance: float = RANK_TOLERANCE) -> Tuple[np.ndarray, np.ndarray]:
    """Indices of retained and aliased columns, both ascending"""
    k = matrix.shape[1]
    if k == 0:
        return np.arange(0), np.arange(0)
    _, r, pivots = linalg.qr(matrix, mode="economic", pivoting=True)
    diagonal = np.abs(np.diag(r))
    if diagonal.size == 0 or diagonal[0] == 0.0:
        rank = 0
    else:
        rank = int(np.sum(diagonal > tolerance * diagonal[0]))
    return np.sort(pivots[:rank]), np.sort(pivots[rank:])


def _solve_full_rank(x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Coefficients, residuals and (X'X)^-1 for a full column rank X"""
    q, r = linalg.qr(x, mode="economic")
    beta = linalg.solve_triangular(r, q.T @ y)
    residuals = y - x @ beta
    r_inv = linalg.solve_triangular(r, np.eye(r.shape[0]))
    return beta, residuals, r_inv @ r_inv.T


def _inference(
        beta: np.ndarray,
        covariance_unscaled: np.ndarray,
        rss: float,
        dof: int,
        scale: float
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    sigma2 = max(rss / dof, (SIGMA_FLOOR * scale) ** 2)
    se = np.sqrt(sigma2 * np.diag(covariance_unscaled))
    t_values = beta / se
    p_values = np.clip(2.0 * stats.t.sf(np.abs(t_values), dof), 0.0, 1.0)
    return se, t_values, p_values


def information_criterion(rss: float, n_obs: int, n_params: int, scale: float = 1.0) -> float:
    """Schwarz criterion n ln(RSS/n) + k ln(n)"""
    floor = n_obs * (SIGMA_FLOOR * scale) ** 2
    return n_obs * np.log(max(rss, floor) / n_obs) + n_params * np.log(n_obs)


def fit_ols(design: DesignMatrix, rank_tolerance: float = RANK_TOLERANCE) -> FitResult:
    x = design.matrix
    y = design.response
    n = design.n_rows
    if n < 2:
        raise InputError("Least squares needs at least two rows")
    if x.shape[1] == 0:
        raise InputError("Least squares needs at least one column")

    kept, dropped = pivoted_rank(x, rank_tolerance)
    dof = n - len(kept)
    if dof <= 0:
        raise DegreesOfFreedomError(n, len(kept))

    columns = design.columns
    if len(dropped):
        logger.debug(f"Dropped aliased columns: {[columns[i].name for i in dropped]}")

    model_matrix = x[:, kept]
    beta, residuals, covariance_unscaled = _solve_full_rank(model_matrix, y)
    rss = float(residuals @ residuals)
    scale = response_scale(y)
    se, t_values, p_values = _inference(beta, covariance_unscaled, rss, dof, scale)

    return FitResult(
        columns=tuple(columns[i] for i in kept),
        coefficients=beta,
        standard_errors=se,
        t_values=t_values,
        p_values=p_values,
        residuals=residuals,
        fitted=y - residuals,
        rss=rss,
        dof=dof,
        n_obs=n,
        information_criterion=information_criterion(rss, n, len(kept), scale),
        dropped=tuple(columns[i] for i in dropped),
        model_matrix=model_matrix,
        covariance_unscaled=covariance_unscaled,
    )


def cluster_se(fit: FitResult, cluster_ids: np.ndarray) -> FitResult:
    """Attach CR1 cluster-robust standard errors; point estimates are untouched"""
    cluster_ids = np.asarray(cluster_ids)
    if len(cluster_ids) != fit.n_obs:
        raise InputError("cluster_ids must have one entry per row of the fit")
    _, inverse = np.unique(cluster_ids, return_inverse=True)
    n_clusters = int(inverse.max()) + 1
    if n_clusters < 2:
        raise InputError("Clustered standard errors need at least two clusters")

    scores = fit.model_matrix * fit.residuals[:, None]
    summed = np.zeros((n_clusters, fit.n_params))
    np.add.at(summed, inverse, scores)
    meat = summed.T @ summed
    bread = fit.covariance_unscaled

    n, k = fit.n_obs, fit.n_params
    correction = n_clusters / (n_clusters - 1) * (n - 1) / (n - k)
    covariance = correction * bread @ meat @ bread
    return fit.with_cluster_errors(np.sqrt(np.clip(np.diag(covariance), 0.0, None)))


def predict(
        fit: FitResult,
        design: DesignMatrix,
        zeroed_columns: AbstractSet[str] = frozenset()
) -> np.ndarray:
    """Fitted ln(emissions); coefficients of `zeroed_columns` contribute nothing"""
    index = design.column_index()
    missing = [name for name in fit.column_names if name not in index]
    if missing:
        raise ProvenanceError(f"Design lacks fitted columns: {missing[:5]}")
    unknown = sorted(set(zeroed_columns) - set(fit.column_names))
    if unknown:
        raise ProvenanceError(f"Cannot zero columns absent from the fit: {unknown[:5]}")

    coefficients = fit.coefficients.copy()
    for name in zeroed_columns:
        coefficients[fit.index_of(name)] = 0.0
    x = design.matrix[:, [index[name] for name in fit.column_names]]
    return x @ coefficients


class ForcedProjection:
    """Annihilator of a forced block, used to partial it out (Frisch-Waugh-Lovell)"""

    def __init__(self, forced: np.ndarray, rank_tolerance: float = RANK_TOLERANCE):
        kept, _ = pivoted_rank(forced, rank_tolerance)
        self.rank = len(kept)
        if self.rank:
            self._basis, _ = linalg.qr(forced[:, kept], mode="economic")
        else:
            self._basis = np.empty((forced.shape[0], 0))

    def residualize(self, values: np.ndarray) -> np.ndarray:
        return values - self._basis @ (self._basis.T @ values)


@dataclass(frozen=True)
class PartialFit:
    """Fit of candidate columns after the forced block was partialled out"""
    coefficients: np.ndarray
    p_values: np.ndarray
    rss: float
    information_criterion: float
    aliased: Tuple[int, ...]


def fit_partialled(
        y_residual: np.ndarray,
        x_residual: np.ndarray,
        original_norms: np.ndarray,
        absorbed_rank: int,
        scale: float,
        rank_tolerance: float = RANK_TOLERANCE
) -> PartialFit:
    """Candidate-only regression on residualized data.

    Coefficients, RSS and standard errors equal those of the full regression with the forced
    block included; degrees of freedom account for `absorbed_rank`. Aliased candidates get
    coefficient 0 and p-value 1.
    """
    n, k = x_residual.shape
    coefficients = np.zeros(k)
    p_values = np.ones(k)

    norms = np.linalg.norm(x_residual, axis=0) if k else np.zeros(0)
    usable: List[int] = [i for i in range(k) if norms[i] > rank_tolerance * max(original_norms[i], 1e-300)]
    kept_local, _ = pivoted_rank(x_residual[:, usable], rank_tolerance) if usable else (np.arange(0), None)
    kept = [usable[i] for i in kept_local]
    aliased = tuple(i for i in range(k) if i not in set(kept))

    dof = n - absorbed_rank - len(kept)
    if dof <= 0:
        raise DegreesOfFreedomError(n, absorbed_rank + len(kept))

    if kept:
        beta, residuals, covariance_unscaled = _solve_full_rank(x_residual[:, kept], y_residual)
        rss = float(residuals @ residuals)
        _, _, p = _inference(beta, covariance_unscaled, rss, dof, scale)
        coefficients[kept] = beta
        p_values[kept] = p
    else:
        rss = float(y_residual @ y_residual)

    return PartialFit(
        coefficients=coefficients,
        p_values=p_values,
        rss=rss,
        information_criterion=information_criterion(rss, n, absorbed_rank + len(kept), scale),
        aliased=aliased,
    )
