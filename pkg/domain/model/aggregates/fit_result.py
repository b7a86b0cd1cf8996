from dataclasses import dataclass, replace
from typing import Dict, Optional, Tuple

import numpy as np

from domain.model.aggregates.design_matrix import CandidateStep, ColumnInfo


@dataclass(frozen=True)
class CoefficientStats:
    coefficient: float
    standard_error: float
    t_value: float
    p_value: float


@dataclass(frozen=True, eq=False)
class FitResult:
    """Least-squares fit over the retained (non-aliased) columns of a design"""
    columns: Tuple[ColumnInfo, ...]
    coefficients: np.ndarray
    standard_errors: np.ndarray
    t_values: np.ndarray
    p_values: np.ndarray
    residuals: np.ndarray
    fitted: np.ndarray
    rss: float
    dof: int
    n_obs: int
    information_criterion: float
    dropped: Tuple[ColumnInfo, ...]
    model_matrix: np.ndarray
    covariance_unscaled: np.ndarray
    cluster_standard_errors: Optional[np.ndarray] = None

    @property
    def n_params(self) -> int:
        return len(self.columns)

    @property
    def column_names(self) -> Tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def index_of(self, name: str) -> int:
        try:
            return self.column_names.index(name)
        except ValueError:
            raise KeyError(f"Column {name} not retained in fit")

    def stats(self, name: str) -> CoefficientStats:
        i = self.index_of(name)
        return CoefficientStats(
            coefficient=float(self.coefficients[i]),
            standard_error=float(self.standard_errors[i]),
            t_value=float(self.t_values[i]),
            p_value=float(self.p_values[i]),
        )

    def candidate_stats(self) -> Dict[CandidateStep, CoefficientStats]:
        """Stats per retained candidate; aliased candidates are absent"""
        return {
            c.candidate: self.stats(c.name)
            for c in self.columns
            if c.candidate is not None
        }

    def with_cluster_errors(self, standard_errors: np.ndarray) -> "FitResult":
        return replace(self, cluster_standard_errors=standard_errors)
