from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from domain.model.aggregates.design_matrix import CandidateStep
from domain.model.aggregates.panel_dataset import PanelDataset

# ln(gdp), ln(gdp)^2, ln(pop), ln(hdd), ln(cdd)
DEFAULT_BETA = (0.6, -0.01, 0.8, 0.15, 0.05)


@dataclass(frozen=True)
class InjectedBreak:
    """Step of size `tau` for country `country_index` from period `period` (1-based) on"""
    country_index: int
    period: int
    tau: float


@dataclass(frozen=True)
class DgpSpec:
    n_countries: int = 10
    n_periods: int = 15
    sigma: float = 0.05
    country_effect_scale: float = 1.0
    group_year_scale: float = 0.05
    trend_scale: float = 0.01
    beta: Tuple[float, float, float, float, float] = DEFAULT_BETA
    covariate_drift: float = 0.02
    covariate_volatility: float = 0.02
    breaks: Tuple[InjectedBreak, ...] = ()
    n_factors: int = 0
    loading_scale: float = 0.5
    developing_every: int = 3
    eu_every: int = 0
    first_year: int = 2000
    base_level: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.n_countries < 2 or self.n_periods < 2:
            raise ValueError("A simulated panel needs at least 2 countries and 2 periods")
        if self.sigma < 0:
            raise ValueError("Noise sigma must be non-negative")
        if len(self.beta) != 5:
            raise ValueError("beta needs five coefficients")
        object.__setattr__(self, "breaks", tuple(self.breaks))
        for b in self.breaks:
            if not 2 <= b.period <= self.n_periods:
                raise ValueError(f"Injected break period {b.period} outside [2, {self.n_periods}]")
            if not 0 <= b.country_index < self.n_countries:
                raise ValueError(f"Injected break country {b.country_index} out of range")
        if self.n_factors < 0:
            raise ValueError("n_factors must be non-negative")

    def with_(self, **changes) -> "DgpSpec":
        return replace(self, **changes)

    @property
    def years(self) -> Tuple[int, ...]:
        return tuple(range(self.first_year, self.first_year + self.n_periods))

    def break_year(self, injected: InjectedBreak) -> int:
        return self.first_year + injected.period - 1


@dataclass(frozen=True, eq=False)
class GroundTruth:
    breaks: Tuple[Tuple[CandidateStep, float], ...]
    structural_log: np.ndarray
    no_break_log: np.ndarray
    noise: np.ndarray


@dataclass(frozen=True, eq=False)
class SimulatedPanel:
    dataset: PanelDataset
    truth: GroundTruth
    spec: DgpSpec = field(default_factory=DgpSpec)


@dataclass(frozen=True)
class CalibrationStats:
    replications: int
    n_candidates: int
    gamma: float
    mean_retained: float
    retained_quantiles: Tuple[float, float, float]
    rate_per_candidate: float
    counts: Tuple[int, ...]


@dataclass(frozen=True)
class RecoveryCell:
    tau: float
    sigma: float
    post_break_length: int


@dataclass(frozen=True)
class RecoveryRow:
    cell: RecoveryCell
    replications: int
    exact_rate: float
    within_one_rate: float
    missed_rate: float
    bias: Optional[float]
    rmse: Optional[float]
