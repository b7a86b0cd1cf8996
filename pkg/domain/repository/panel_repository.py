from abc import ABC, abstractmethod
from typing import Dict, List, Optional, Sequence, Tuple

from domain.model.aggregates.panel_dataset import PanelDataset, SeriesKey
from domain.model.aggregates.policy_event import PolicyEvent
from domain.model.valueobjects.policy_category import PolicyCategory


class PanelRepository(ABC):
    """Repository interface for emission panels"""

    @abstractmethod
    def load_panel(
            self,
            series_key: SeriesKey,
            drop_unbalanced: bool = False,
            year_range: Optional[Tuple[int, int]] = None
    ) -> PanelDataset:
        """Load one validated, balanced series"""
        pass

    @abstractmethod
    def available_series(self) -> List[SeriesKey]:
        """Series present in the emission source"""
        pass

    @abstractmethod
    def save_panels(self, datasets: Sequence[PanelDataset]) -> None:
        """Persist panels sharing countries, years and covariates"""
        pass


class PolicyRepository(ABC):
    """Repository interface for policy events and the instrument taxonomy"""

    @abstractmethod
    def category_map(self) -> Dict[str, PolicyCategory]:
        """Instrument name (lower case) to category"""
        pass

    @abstractmethod
    def load_events(self) -> List[PolicyEvent]:
        """All policy events, categorized"""
        pass
