from dataclasses import dataclass
from itertools import groupby
from typing import Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np
from scipy import stats

from domain.model.aggregates.break_estimate import BreakEstimate, BreakSummaryRow, PollutantTotal
from domain.model.aggregates.design_matrix import CandidateStep, DesignMatrix
from domain.model.aggregates.fit_result import FitResult
from domain.model.aggregates.panel_dataset import PanelDataset
from domain.model.aggregates.selection import SelectionResult
from domain.services.design_builder import attach_candidates, build_forced, indicator_block
from domain.services.least_squares import (
    RANK_TOLERANCE,
    SIGMA_FLOOR,
    ForcedProjection,
    cluster_se,
    fit_ols,
    predict,
    response_scale,
)

logger = logging.getLogger(__name__)

TIMING_LEVEL = 0.99
BOUND_Z = 1.96


@dataclass(frozen=True, eq=False)
class SparseFit:
    dataset: PanelDataset
    design: DesignMatrix
    fit: FitResult
    estimates: Tuple[BreakEstimate, ...]

    def fitted_levels(self) -> np.ndarray:
        """Fitted emissions in tonnes, (N, T)"""
        shape = (self.dataset.n_countries, self.dataset.n_periods)
        return np.exp(predict(self.fit, self.design)).reshape(shape)

    def counterfactual_levels(self) -> np.ndarray:
        """Observed emissions with every estimated break removed, (N, T)"""
        shift = np.zeros((self.dataset.n_countries, self.dataset.n_periods))
        for estimate in self.estimates:
            k = self.dataset.period_index(estimate.break_year)
            shift[estimate.country_index, k:] += estimate.tau_hat
        return self.dataset.emissions * np.exp(-shift)


class EffectsService:
    """Sparse re-estimation of retained breaks: effect sizes, timing intervals, counterfactuals, totals"""

    def __init__(self, window: int = 2, timing_level: float = TIMING_LEVEL):
        if window < 0:
            raise ValueError("Attribution window half-width must be non-negative")
        self._window = window
        self._timing_level = timing_level

    @staticmethod
    def effect_size(tau_hat: float) -> float:
        """Percent change implied by a log-point coefficient"""
        return 100.0 * float(np.expm1(tau_hat))

    def fit_sparse(
            self,
            dataset: PanelDataset,
            selection: SelectionResult,
            gamma: Optional[float] = None
    ) -> SparseFit:
        gamma = selection.config.gamma if gamma is None else gamma
        design = attach_candidates(dataset, build_forced(dataset), selection.retained)
        fit = fit_ols(design)
        if dataset.n_countries >= 2:
            fit = cluster_se(fit, design.country_ids)

        estimates = []
        for step in selection.retained_steps:
            estimates.append(self._estimate(dataset, design, fit, step, gamma))
        logger.info(f"[{dataset.series_key.label}] sparse fit: {len(estimates)} breaks, RSS={fit.rss:.6g}")
        return SparseFit(dataset=dataset, design=design, fit=fit, estimates=tuple(estimates))

    def _estimate(
            self,
            dataset: PanelDataset,
            design: DesignMatrix,
            fit: FitResult,
            step: CandidateStep,
            gamma: float
    ) -> BreakEstimate:
        country = dataset.countries[step.country_index]
        name = step.label(dataset.country_codes)
        coefficient = fit.stats(name)
        significant = coefficient.p_value < gamma
        if not significant:
            logger.warning(
                f"[{dataset.series_key.label}] break {country.iso3}.{step.year} has p={coefficient.p_value:.4g} "
                f">= gamma={gamma} in the sparse fit; flagged, kept"
            )

        ci_low, ci_high = self.timing_ci(dataset, design, fit, step, self._timing_level)
        years, observed, counterfactual = self.counterfactual(dataset, coefficient.coefficient, step)
        reduction, low, high = self.cumulative_reduction(observed, coefficient.coefficient, coefficient.standard_error)
        se_cluster = None
        if fit.cluster_standard_errors is not None:
            se_cluster = float(fit.cluster_standard_errors[fit.index_of(name)])

        return BreakEstimate(
            series_key=dataset.series_key,
            country=country.iso3,
            country_index=step.country_index,
            group=country.group,
            eu_member=country.eu_member,
            break_year=step.year,
            tau_hat=coefficient.coefficient,
            se=coefficient.standard_error,
            p_value=coefficient.p_value,
            significant=significant,
            ci_low=ci_low,
            ci_high=ci_high,
            window_low=ci_low - self._window,
            window_high=ci_high + self._window,
            years=years,
            observed=observed,
            counterfactual=counterfactual,
            cumulative_reduction=reduction,
            cumulative_low=low,
            cumulative_high=high,
            se_cluster=se_cluster,
        )

    def timing_ci(
            self,
            dataset: PanelDataset,
            design: DesignMatrix,
            fit: FitResult,
            step: CandidateStep,
            level: float = TIMING_LEVEL
    ) -> Tuple[int, int]:
        """Likelihood-ratio interval for the break date.

        The break is moved to every admissible year s' with the rest of the model held; s' is
        kept while n ln(RSS(s')/RSS(s)) stays below the chi-square(1) quantile. The interval is
        the contiguous run of kept years around s.
        """
        name = step.label(dataset.country_codes)
        index = design.column_index()
        others = [index[c] for c in fit.column_names if c != name]
        projection = ForcedProjection(design.matrix[:, others])
        y_residual = projection.residualize(design.response)
        rss_without = float(y_residual @ y_residual)

        n = design.n_rows
        floor = n * (SIGMA_FLOOR * response_scale(design.response)) ** 2
        years = dataset.years[1:]
        moved = [CandidateStep(step.country_index, year) for year in years]
        raw = indicator_block(dataset, moved)
        residual = projection.residualize(raw)

        rss = np.full(len(years), rss_without)
        for m in range(len(years)):
            x = residual[:, m]
            xx = float(x @ x)
            if xx > (RANK_TOLERANCE * np.linalg.norm(raw[:, m])) ** 2:
                rss[m] = rss_without - float(x @ y_residual) ** 2 / xx
        rss = np.maximum(rss, floor)

        critical = stats.chi2.ppf(level, df=1)
        position = years.index(step.year)
        statistic = n * np.log(rss / rss[position])
        inside = statistic <= critical
        inside[position] = True

        low = position
        while low > 0 and inside[low - 1]:
            low -= 1
        high = position
        while high < len(years) - 1 and inside[high + 1]:
            high += 1

        if low == 0 and high == len(years) - 1:
            logger.warning(
                f"[{dataset.series_key.label}] timing interval of {dataset.country_codes[step.country_index]}."
                f"{step.year} spans the whole sample; timing weakly identified"
            )
        return years[low], years[high]

    @staticmethod
    def counterfactual(
            dataset: PanelDataset,
            tau_hat: float,
            step: CandidateStep
    ) -> Tuple[Tuple[int, ...], np.ndarray, np.ndarray]:
        """Observed post-break emissions and the same path without this break (tonnes/year)"""
        k = dataset.period_index(step.year)
        observed = np.array(dataset.emissions[step.country_index, k:])
        return dataset.years[k:], observed, observed * np.exp(-tau_hat)

    @staticmethod
    def cumulative_reduction(observed: np.ndarray, tau_hat: float, se: float) -> Tuple[float, float, float]:
        """Sum over post-break years of counterfactual minus observed, with tau +/- 1.96 se bounds"""
        def reduction(tau: float) -> float:
            return float(np.sum(observed * np.expm1(-tau)))

        return reduction(tau_hat), reduction(tau_hat + BOUND_Z * se), reduction(tau_hat - BOUND_Z * se)

    @staticmethod
    def cumulative_totals(estimates: Sequence[BreakEstimate]) -> List[PollutantTotal]:
        totals: Dict[str, List[BreakEstimate]] = {}
        for estimate in estimates:
            totals.setdefault(estimate.series_key.pollutant.value, []).append(estimate)
        return [
            PollutantTotal(
                pollutant=pollutant,
                n_breaks=len(items),
                reduction_t=float(sum(e.cumulative_reduction for e in items)),
                low_t=float(sum(e.cumulative_low for e in items)),
                high_t=float(sum(e.cumulative_high for e in items)),
            )
            for pollutant, items in sorted(totals.items())
        ]

    @staticmethod
    def summarize_breaks(estimates: Sequence[BreakEstimate]) -> List[BreakSummaryRow]:
        """Break counts, mean effect and summed reduction per (pollutant, sector, group)"""
        def key(e: BreakEstimate):
            return e.series_key.pollutant.value, e.series_key.sector.value, e.group.value

        rows = []
        for (pollutant, sector, group), items in groupby(sorted(estimates, key=key), key=key):
            items = list(items)
            rows.append(BreakSummaryRow(
                pollutant=pollutant,
                sector=sector,
                group=group,
                n_breaks=len(items),
                mean_effect_pct=float(np.mean([e.effect_pct for e in items])),
                cumulative_reduction_t=float(sum(e.cumulative_reduction for e in items)),
            ))
        return rows
