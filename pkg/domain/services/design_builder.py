"""
Construction of the saturated two-way fixed-effects design.

Forced block: country dummies, group-year dummies (first year of each group dropped),
ln(gdp), ln(gdp)^2, ln(pop), ln(hdd), ln(cdd), EU controls on member rows and centred
country trends. Candidate block: step and/or impulse indicators.
"""
import logging
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from domain.model.aggregates.design_matrix import CandidateStep, ColumnInfo, ColumnRole, DesignMatrix
from domain.model.aggregates.panel_dataset import PanelDataset
from domain.model.valueobjects.indicator_kind import IndicatorKind

logger = logging.getLogger(__name__)


def step_candidates(dataset: PanelDataset) -> List[CandidateStep]:
    """All N x (T-1) step candidates; no break at the first period"""
    return [
        CandidateStep(j, year)
        for j in range(dataset.n_countries)
        for year in dataset.years[1:]
    ]


def impulse_candidates(dataset: PanelDataset) -> List[CandidateStep]:
    return [
        CandidateStep(j, year, IndicatorKind.IMPULSE)
        for j in range(dataset.n_countries)
        for year in dataset.years
    ]


def candidates_for(dataset: PanelDataset, kind: IndicatorKind) -> List[CandidateStep]:
    if kind == IndicatorKind.STEP:
        return step_candidates(dataset)
    if kind == IndicatorKind.IMPULSE:
        return impulse_candidates(dataset)
    return sorted(step_candidates(dataset) + impulse_candidates(dataset))


def indicator_column(dataset: PanelDataset, candidate: CandidateStep) -> np.ndarray:
    """0/1 column in (country, year) row order"""
    if candidate.is_step and not dataset.t_first < candidate.year <= dataset.t_last:
        raise ValueError(f"Step year {candidate.year} must lie in ({dataset.t_first}, {dataset.t_last}]")
    if not 0 <= candidate.country_index < dataset.n_countries:
        raise ValueError(f"Country index {candidate.country_index} out of range")

    block = np.zeros((dataset.n_countries, dataset.n_periods))
    k = dataset.period_index(candidate.year)
    if candidate.is_step:
        block[candidate.country_index, k:] = 1.0
    else:
        block[candidate.country_index, k] = 1.0
    return block.ravel()


def indicator_block(dataset: PanelDataset, candidates: Sequence[CandidateStep]) -> np.ndarray:
    if not candidates:
        return np.empty((dataset.n_rows, 0))
    return np.column_stack([indicator_column(dataset, c) for c in candidates])


def covariate_panels(dataset: PanelDataset) -> List[Tuple[str, np.ndarray]]:
    """(name, N x T values) of every control regressor; EU controls only on member rows"""
    log_gdp = np.log(dataset.gdp)
    panels = [
        ("ln_gdp", log_gdp),
        ("ln_gdp_sq", log_gdp ** 2),
        ("ln_pop", np.log(dataset.population)),
        ("ln_hdd", np.log(dataset.hdd)),
        ("ln_cdd", np.log(dataset.cdd)),
    ]
    eu_rows = np.array([c.eu_member for c in dataset.countries], dtype=float)[:, None]
    for name, values in dataset.eu_controls.items():
        block = values * eu_rows
        if not block.any():
            logger.debug(f"EU control {name} is zero on every member row, skipped")
            continue
        panels.append((f"eu_{name}", block))
    return panels


def build_forced(dataset: PanelDataset) -> DesignMatrix:
    """Forced-only design; candidates empty"""
    n, t = dataset.n_countries, dataset.n_periods
    codes = dataset.country_codes
    columns: List[np.ndarray] = []
    info: List[ColumnInfo] = []

    def add(name: str, block: np.ndarray):
        columns.append(block.ravel())
        info.append(ColumnInfo(name, ColumnRole.FORCED))

    for j, code in enumerate(codes):
        block = np.zeros((n, t))
        block[j, :] = 1.0
        add(f"mu_{code}", block)

    for group in dataset.groups():
        members = np.array([c.group == group for c in dataset.countries])
        for k, year in enumerate(dataset.years[1:], start=1):
            block = np.zeros((n, t))
            block[members, k] = 1.0
            add(f"eta_{group.value}_{year}", block)

    for name, block in covariate_panels(dataset):
        add(name, block)

    # The trends of one country per group are spanned by group-year and country dummies
    centred = np.arange(t, dtype=float) - (t - 1) / 2.0
    reference = {
        group: max(j for j, c in enumerate(dataset.countries) if c.group == group)
        for group in dataset.groups()
    }
    for j, code in enumerate(codes):
        if j == reference[dataset.countries[j].group]:
            continue
        block = np.zeros((n, t))
        block[j, :] = centred
        add(f"trend_{code}", block)

    forced = np.column_stack(columns)
    return DesignMatrix(
        response=dataset.log_emissions,
        forced=forced,
        forced_columns=tuple(info),
        candidates=np.empty((dataset.n_rows, 0)),
        candidate_columns=(),
        country_ids=np.repeat(np.arange(n), t),
    )


def attach_candidates(
        dataset: PanelDataset,
        forced: DesignMatrix,
        candidates: Iterable[CandidateStep]
) -> DesignMatrix:
    ordered = sorted(set(candidates))
    codes = dataset.country_codes
    return DesignMatrix(
        response=forced.response,
        forced=forced.forced,
        forced_columns=forced.forced_columns,
        candidates=indicator_block(dataset, ordered),
        candidate_columns=tuple(
            ColumnInfo(c.label(codes), ColumnRole.CANDIDATE, c) for c in ordered
        ),
        country_ids=forced.country_ids,
    )


def build_design(
        dataset: PanelDataset,
        candidates: Iterable[CandidateStep],
        include_impulses: bool = False
) -> DesignMatrix:
    """Saturated design: forced regressors plus the given candidates (and every impulse if asked)"""
    candidates = list(candidates)
    if include_impulses:
        candidates += impulse_candidates(dataset)
    design = attach_candidates(dataset, build_forced(dataset), candidates)
    logger.debug(
        f"Design for {dataset.series_key.label}: {design.n_rows} rows, "
        f"{len(design.forced_columns)} forced, {len(design.candidate_columns)} candidate columns"
    )
    return design
