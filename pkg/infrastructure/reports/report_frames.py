"""Domain results to report rows"""
from typing import Dict, List, Sequence

import pandas as pd

from application.attribution_service import TOP_CASES
from application.effects_service import SparseFit
from domain.model.aggregates.break_estimate import BreakEstimate, BreakSummaryRow, PollutantTotal
from domain.model.aggregates.policy_event import ComboShareRow, MatchedBreak, MixRow, SummaryRow
from domain.model.aggregates.selection import SelectionResult
from domain.model.aggregates.simulation import RecoveryRow
from infrastructure.persistence.models.panel_schema import (
    ATTRIBUTION_COLUMNS,
    BREAK_SUMMARY_COLUMNS,
    BREAKS_COLUMNS,
    COMBO_COLUMNS,
    MIX_COLUMNS,
    RECOVERY_COLUMNS,
    SUMMARY_COLUMNS,
    TOTALS_COLUMNS,
)


def breaks_frame(estimates: Sequence[BreakEstimate]) -> pd.DataFrame:
    rows = [
        {
            "series_key": e.series_key.label,
            "country": e.country,
            "break_year": e.break_year,
            "tau_hat": e.tau_hat,
            "se": e.se,
            "effect_pct": e.effect_pct,
            "ci99_lo": e.ci_low,
            "ci99_hi": e.ci_high,
            "window_lo": e.window_low,
            "window_hi": e.window_high,
            "cum_reduction_t": e.cumulative_reduction,
            "cum_lo_t": e.cumulative_low,
            "cum_hi_t": e.cumulative_high,
            "se_cluster": e.se_cluster,
            "p_value": e.p_value,
            "significant": e.significant,
        }
        for e in sorted(estimates, key=lambda e: e.key)
    ]
    return pd.DataFrame(rows, columns=list(BREAKS_COLUMNS))


def attribution_frame(matches: Sequence[MatchedBreak]) -> pd.DataFrame:
    rows = []
    for m in sorted(matches, key=lambda m: m.estimate.key):
        e = m.estimate
        rows.append({
            "series_key": e.series_key.label,
            "country": e.country,
            "group": e.group.value,
            "break_year": e.break_year,
            "ci99_lo": e.ci_low,
            "ci99_hi": e.ci_high,
            "effect_pct": e.effect_pct,
            "n_events": len(m.events),
            "instruments": ";".join(m.instruments),
            "categories": ";".join(sorted(c.value for c in m.categories)),
            "mix_label": m.mix_label.value,
            "includes_pricing": m.includes_pricing,
        })
    return pd.DataFrame(rows, columns=list(ATTRIBUTION_COLUMNS))


def summary_frame(rows: Sequence[SummaryRow]) -> pd.DataFrame:
    records = []
    for r in rows:
        cases = list(r.cases) + [""] * (TOP_CASES - len(r.cases))
        records.append({
            "instrument": r.instrument,
            "frequency": r.frequency,
            "mean_effect": r.mean_effect,
            "typology": r.typology.value,
            **{f"case{i + 1}": case for i, case in enumerate(cases)},
        })
    return pd.DataFrame(records, columns=list(SUMMARY_COLUMNS))


def mix_frame(rows: Sequence[MixRow]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            (r.instrument, r.mean_alone, r.mean_in_mix, r.mean_in_mix_with_pricing,
             r.n_alone, r.n_in_mix, r.n_in_mix_with_pricing)
            for r in rows
        ],
        columns=list(MIX_COLUMNS),
    )


def combo_frame(rows: Sequence[ComboShareRow]) -> pd.DataFrame:
    return pd.DataFrame(
        [(r.sector, r.group, r.combination, r.count, r.share) for r in rows],
        columns=list(COMBO_COLUMNS),
    )


def totals_frame(rows: Sequence[PollutantTotal]) -> pd.DataFrame:
    return pd.DataFrame(
        [(r.pollutant, r.n_breaks, r.reduction_t, r.low_t, r.high_t, r.reduction_gt, r.low_gt, r.high_gt)
         for r in rows],
        columns=list(TOTALS_COLUMNS),
    )


def break_summary_frame(rows: Sequence[BreakSummaryRow]) -> pd.DataFrame:
    return pd.DataFrame(
        [(r.pollutant, r.sector, r.group, r.n_breaks, r.mean_effect_pct, r.cumulative_reduction_t) for r in rows],
        columns=list(BREAK_SUMMARY_COLUMNS),
    )


def selection_payload(selection: SelectionResult, country_codes: Sequence[str], group: str) -> Dict:
    return {
        "group": group,
        "converged": selection.converged,
        "iterations": selection.iterations,
        "n_candidates": selection.n_candidates,
        "config": {
            "gamma": selection.config.gamma,
            "block_size": selection.config.block_size,
            "seed": selection.config.seed,
            "max_paths": selection.config.max_paths,
            "indicator_kind": selection.config.indicator_kind.value,
        },
        "retained": [c.label(country_codes) for c in selection.retained],
        "union_history": [[c.label(country_codes) for c in union] for union in selection.union_history],
    }


def trace_records(selection: SelectionResult, country_codes: Sequence[str], group: str) -> List[Dict]:
    return [{"group": group, **record.to_dict(country_codes)} for record in selection.trace]


def plot_payload(fits: Sequence[SparseFit]) -> Dict:
    """Observed, fitted and counterfactual paths per country plus break markers with their bands"""
    countries = {}
    years: List[int] = []
    for fit in fits:
        dataset = fit.dataset
        years = list(dataset.years)
        fitted = fit.fitted_levels()
        counterfactual = fit.counterfactual_levels()
        markers: Dict[str, List[Dict]] = {}
        for e in sorted(fit.estimates, key=lambda e: e.break_year):
            markers.setdefault(e.country, []).append({
                "year": e.break_year,
                "tau_hat": e.tau_hat,
                "effect_pct": e.effect_pct,
                "significant": e.significant,
                "ci99": [e.ci_low, e.ci_high],
                "window": [e.window_low, e.window_high],
                "cum_reduction_t": e.cumulative_reduction,
            })
        for i, country in enumerate(dataset.countries):
            countries[country.iso3] = {
                "group": country.group.value,
                "observed": dataset.emissions[i],
                "fitted": fitted[i],
                "counterfactual": counterfactual[i],
                "breaks": markers.get(country.iso3, []),
            }
    return {"years": years, "countries": dict(sorted(countries.items()))}


def recovery_frame(rows: Sequence[RecoveryRow]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            (r.cell.tau, r.cell.sigma, r.cell.post_break_length, r.replications,
             r.exact_rate, r.within_one_rate, r.missed_rate, r.bias, r.rmse)
            for r in rows
        ],
        columns=list(RECOVERY_COLUMNS),
    )
