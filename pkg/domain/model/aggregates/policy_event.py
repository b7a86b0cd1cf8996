from dataclasses import dataclass
from typing import FrozenSet, Optional, Tuple

from domain.model.aggregates.break_estimate import BreakEstimate
from domain.model.valueobjects.mix_label import MixLabel
from domain.model.valueobjects.policy_action import PolicyAction
from domain.model.valueobjects.policy_category import PolicyCategory
from domain.model.valueobjects.sector import Sector
from domain.model.valueobjects.typology import Typology


@dataclass(frozen=True)
class PolicyEvent:
    year: int
    country: str
    sector: Sector
    instrument: str
    action: PolicyAction
    category: PolicyCategory
    eu_wide: bool = False

    def __post_init__(self):
        if not self.instrument:
            raise ValueError("Policy event needs an instrument name")
        if not isinstance(self.category, PolicyCategory):
            raise ValueError(f"Instrument '{self.instrument}' has no policy category")

    def __lt__(self, other: "PolicyEvent") -> bool:
        return self.sort_key < other.sort_key

    @property
    def sort_key(self) -> Tuple:
        return self.year, self.country, self.sector.value, self.instrument, self.action.value

    def applies_to(self, country: str, eu_member: bool, sector: Sector) -> bool:
        if sector != self.sector:
            return False
        return self.country == country or (self.eu_wide and eu_member)


@dataclass(frozen=True, eq=False)
class MatchedBreak:
    estimate: BreakEstimate
    events: Tuple[PolicyEvent, ...]

    @property
    def matched(self) -> bool:
        return bool(self.events)

    @property
    def instruments(self) -> Tuple[str, ...]:
        return tuple(sorted({e.instrument for e in self.events}))

    @property
    def categories(self) -> FrozenSet[PolicyCategory]:
        return frozenset(e.category for e in self.events)

    @property
    def mix_label(self) -> MixLabel:
        if not self.events:
            return MixLabel.UNMATCHED
        return MixLabel.SINGLE_TYPE if len(self.categories) == 1 else MixLabel.MIXED_TYPE

    @property
    def includes_pricing(self) -> bool:
        return PolicyCategory.PRICING in self.categories

    def combination_label(self) -> str:
        return "+".join(sorted(c.value for c in self.categories))


@dataclass(frozen=True)
class SummaryRow:
    instrument: str
    frequency: int
    mean_effect: float
    typology: Typology
    developed_share: float
    cases: Tuple[str, ...]


@dataclass(frozen=True)
class MixRow:
    """Mean effect_pct of breaks featuring an instrument alone, in any mix, in a mix with pricing"""
    instrument: str
    mean_alone: Optional[float]
    mean_in_mix: Optional[float]
    mean_in_mix_with_pricing: Optional[float]
    n_alone: int
    n_in_mix: int
    n_in_mix_with_pricing: int


@dataclass(frozen=True)
class ComboShareRow:
    sector: str
    group: str
    combination: str
    count: int
    share: float
