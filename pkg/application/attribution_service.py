from collections import Counter, defaultdict
from typing import Dict, List, Sequence, Tuple
import logging

import numpy as np

from domain.model.aggregates.break_estimate import BreakEstimate
from domain.model.aggregates.policy_event import ComboShareRow, MatchedBreak, MixRow, PolicyEvent, SummaryRow
from domain.model.valueobjects.country_group import CountryGroup
from domain.model.valueobjects.policy_category import PolicyCategory
from domain.model.valueobjects.typology import Typology

logger = logging.getLogger(__name__)

TOP_CASES = 3


class AttributionService:
    """Break deduplication, policy matching within attribution windows, and descriptive summaries"""

    def __init__(self, window: int = 2):
        if window < 0:
            raise ValueError("Attribution window half-width must be non-negative")
        self._window = window

    @staticmethod
    def dedupe_breaks(estimates: Sequence[BreakEstimate]) -> List[BreakEstimate]:
        """Within each (series, country), drop breaks whose timing interval nests with a larger-effect break's"""
        ranked = sorted(
            range(len(estimates)),
            key=lambda i: (-abs(estimates[i].effect), estimates[i].break_year, i),
        )
        kept: Dict[Tuple[str, str], List[BreakEstimate]] = defaultdict(list)
        keep_index = set()
        for i in ranked:
            estimate = estimates[i]
            group = kept[(estimate.series_key.label, estimate.country)]
            if any(k.contains_interval(estimate) or estimate.contains_interval(k) for k in group):
                logger.debug(f"Dropped nested break {estimate.key}")
                continue
            group.append(estimate)
            keep_index.add(i)
        return [e for i, e in enumerate(estimates) if i in keep_index]

    def match_policies(
            self,
            breaks: Sequence[BreakEstimate],
            events: Sequence[PolicyEvent]
    ) -> List[MatchedBreak]:
        ordered_events = sorted(events)
        matches = []
        for estimate in breaks:
            low = estimate.ci_low - self._window
            high = estimate.ci_high + self._window
            found = tuple(
                event for event in ordered_events
                if low <= event.year <= high
                and event.applies_to(estimate.country, estimate.eu_member, estimate.series_key.sector)
            )
            matches.append(MatchedBreak(estimate=estimate, events=found))
        matched = sum(1 for m in matches if m.matched)
        logger.info(f"Matched {matched} of {len(matches)} breaks to policy events (window +/-{self._window})")
        return matches

    @staticmethod
    def typology(developed: int, developing: int) -> Typology:
        total = developed + developing
        if total and 3 * developed >= 2 * total:
            return Typology.DEVELOPED_DOMINANT
        if total and 3 * developing >= 2 * total:
            return Typology.DEVELOPING_DOMINATED
        return Typology.EQUIVALENT

    def summarize_instruments(self, matches: Sequence[MatchedBreak]) -> List[SummaryRow]:
        """Per instrument: frequency, mean effect (fraction), origin typology and top cases by |effect|"""
        by_instrument: Dict[str, List[BreakEstimate]] = defaultdict(list)
        for match in matches:
            for instrument in match.instruments:
                by_instrument[instrument].append(match.estimate)

        rows = []
        for instrument, estimates in by_instrument.items():
            developed = sum(1 for e in estimates if e.group == CountryGroup.DEVELOPED)
            top = sorted(estimates, key=lambda e: (-abs(e.effect), e.country, e.break_year))[:TOP_CASES]
            rows.append(SummaryRow(
                instrument=instrument,
                frequency=len(estimates),
                mean_effect=float(np.mean([e.effect for e in estimates])),
                typology=self.typology(developed, len(estimates) - developed),
                developed_share=developed / len(estimates),
                cases=tuple(f"{e.case_label} {e.series_key.sector.value}" for e in top),
            ))
        return sorted(rows, key=lambda r: (-r.frequency, r.instrument))

    @staticmethod
    def mix_vs_single(matches: Sequence[MatchedBreak]) -> List[MixRow]:
        alone: Dict[str, List[float]] = defaultdict(list)
        in_mix: Dict[str, List[float]] = defaultdict(list)
        with_pricing: Dict[str, List[float]] = defaultdict(list)

        for match in matches:
            instruments = match.instruments
            if not instruments:
                continue
            pricing = {e.instrument for e in match.events if e.category == PolicyCategory.PRICING}
            effect = match.estimate.effect_pct
            if len(instruments) == 1:
                alone[instruments[0]].append(effect)
                continue
            for instrument in instruments:
                in_mix[instrument].append(effect)
                if pricing - {instrument}:
                    with_pricing[instrument].append(effect)

        def mean(values: List[float]):
            return float(np.mean(values)) if values else None

        names = sorted(set(alone) | set(in_mix))
        return [
            MixRow(
                instrument=name,
                mean_alone=mean(alone[name]),
                mean_in_mix=mean(in_mix[name]),
                mean_in_mix_with_pricing=mean(with_pricing[name]),
                n_alone=len(alone[name]),
                n_in_mix=len(in_mix[name]),
                n_in_mix_with_pricing=len(with_pricing[name]),
            )
            for name in names
        ]

    @staticmethod
    def combo_shares(matches: Sequence[MatchedBreak]) -> List[ComboShareRow]:
        """Share of matched breaks per category combination within each (sector, group)"""
        counts: Dict[Tuple[str, str], Counter] = defaultdict(Counter)
        for match in matches:
            if not match.matched:
                continue
            cell = (match.estimate.series_key.sector.value, match.estimate.group.value)
            counts[cell][match.combination_label()] += 1

        rows = []
        for (sector, group), counter in sorted(counts.items()):
            total = sum(counter.values())
            for combination, count in sorted(counter.items()):
                rows.append(ComboShareRow(sector, group, combination, count, count / total))
        return rows
