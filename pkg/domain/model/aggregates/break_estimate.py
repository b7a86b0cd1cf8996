from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from domain.model.aggregates.panel_dataset import SeriesKey
from domain.model.valueobjects.country_group import CountryGroup


@dataclass(frozen=True, eq=False)
class BreakEstimate:
    """One retained step break re-estimated in the sparse model.

    `effect` is the multiplicative change exp(tau)-1, `effect_pct` the same in percent.
    Counterfactual and observed series cover the years from the break to the sample end.
    """
    series_key: SeriesKey
    country: str
    country_index: int
    group: CountryGroup
    eu_member: bool
    break_year: int
    tau_hat: float
    se: float
    p_value: float
    significant: bool
    ci_low: int
    ci_high: int
    window_low: int
    window_high: int
    years: Tuple[int, ...] = ()
    observed: Optional[np.ndarray] = None
    counterfactual: Optional[np.ndarray] = None
    cumulative_reduction: float = 0.0
    cumulative_low: float = 0.0
    cumulative_high: float = 0.0
    se_cluster: Optional[float] = None

    def __post_init__(self):
        if not self.ci_low <= self.break_year <= self.ci_high:
            raise ValueError(
                f"Break year {self.break_year} outside its timing interval [{self.ci_low}, {self.ci_high}]"
            )
        if self.cumulative_low > self.cumulative_high:
            raise ValueError("Cumulative reduction bounds out of order")

    @property
    def effect(self) -> float:
        return float(np.expm1(self.tau_hat))

    @property
    def effect_pct(self) -> float:
        return 100.0 * self.effect

    @property
    def key(self) -> Tuple[str, str, int]:
        return self.series_key.label, self.country, self.break_year

    @property
    def case_label(self) -> str:
        """'Chile.2014 (-32.4%)' style label used in summary tables"""
        return f"{self.country}.{self.break_year} ({self.effect_pct:.1f}%)"

    def contains_interval(self, other: "BreakEstimate") -> bool:
        return self.ci_low <= other.ci_low and other.ci_high <= self.ci_high


@dataclass(frozen=True)
class PollutantTotal:
    pollutant: str
    n_breaks: int
    reduction_t: float
    low_t: float
    high_t: float

    @property
    def reduction_gt(self) -> float:
        return self.reduction_t / 1e9

    @property
    def low_gt(self) -> float:
        return self.low_t / 1e9

    @property
    def high_gt(self) -> float:
        return self.high_t / 1e9


@dataclass(frozen=True)
class BreakSummaryRow:
    pollutant: str
    sector: str
    group: str
    n_breaks: int
    mean_effect_pct: float
    cumulative_reduction_t: float
