from pathlib import Path
from typing import Dict, List, Optional
import logging

from domain.model.aggregates.policy_event import PolicyEvent
from domain.model.exceptions import InputError
from domain.model.valueobjects.policy_action import PolicyAction
from domain.model.valueobjects.policy_category import PolicyCategory
from domain.model.valueobjects.sector import Sector
from domain.repository.panel_repository import PolicyRepository
from infrastructure.persistence.models.panel_schema import CATEGORIES_COLUMNS, POLICIES_COLUMNS
from infrastructure.persistence.repositories.csv_panel_repository import parse_flag, read_table

logger = logging.getLogger(__name__)

POLICIES_FILE = "policies.csv"
DEFAULT_CATEGORIES_FILE = Path(__file__).resolve().parent.parent / "data" / "policy_categories.csv"


def _normalize(instrument: str) -> str:
    return " ".join(str(instrument).lower().split())


class CsvPolicyRepository(PolicyRepository):
    """Policy events from a CSV; categories come from the event row or the instrument table"""

    def __init__(self, policies_file: Optional[Path], categories_file: Optional[Path] = None):
        self.policies_file = Path(policies_file) if policies_file else None
        self.categories_file = Path(categories_file) if categories_file else DEFAULT_CATEGORIES_FILE
        self._categories: Optional[Dict[str, PolicyCategory]] = None

    def category_map(self) -> Dict[str, PolicyCategory]:
        if self._categories is None:
            frame = read_table(self.categories_file, CATEGORIES_COLUMNS)
            mapping = {}
            for row in frame.itertuples(index=False):
                try:
                    mapping[_normalize(row.instrument)] = PolicyCategory(str(row.category).strip().lower())
                except ValueError:
                    raise InputError(f"Unknown category '{row.category}' for '{row.instrument}' "
                                     f"in {self.categories_file.name}")
            self._categories = mapping
        return self._categories

    def load_events(self) -> List[PolicyEvent]:
        if self.policies_file is None:
            logger.warning("No policy file given; every break will be unmatched")
            return []
        frame = read_table(self.policies_file, POLICIES_COLUMNS)
        categories = self.category_map()
        has_category = "category" in frame.columns

        events = []
        for number, row in enumerate(frame.itertuples(index=False), start=2):
            where = f"{self.policies_file.name} line {number}"
            instrument = str(row.instrument).strip()
            raw_category = str(row.category).strip().lower() if has_category else ""
            try:
                if raw_category and raw_category != "nan":
                    category = PolicyCategory(raw_category)
                else:
                    category = categories[_normalize(instrument)]
            except ValueError:
                raise InputError(f"Unknown category '{row.category}' in {where}")
            except KeyError:
                raise InputError(f"Instrument '{instrument}' has no category mapping ({where})")
            try:
                events.append(PolicyEvent(
                    year=int(row.year),
                    country=row.country_iso3,
                    sector=Sector(str(row.sector).strip().lower()),
                    instrument=instrument,
                    action=PolicyAction(str(row.action).strip().lower()),
                    category=category,
                    eu_wide=parse_flag(row.eu_wide, where),
                ))
            except ValueError as e:
                raise InputError(f"Invalid policy event in {where}: {e}") from e

        logger.info(f"Loaded {len(events)} policy events from {self.policies_file.name}")
        return sorted(events)
