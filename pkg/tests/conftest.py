import numpy as np
import pytest

from application.simulation_service import SimulationService
from domain.model.aggregates.break_estimate import BreakEstimate
from domain.model.aggregates.panel_dataset import SeriesKey
from domain.model.aggregates.policy_event import PolicyEvent
from domain.model.aggregates.simulation import DgpSpec, InjectedBreak
from domain.model.valueobjects.country_group import CountryGroup
from domain.model.valueobjects.policy_action import PolicyAction
from domain.model.valueobjects.policy_category import PolicyCategory
from domain.model.valueobjects.pollutant import Pollutant
from domain.model.valueobjects.sector import Sector
from infrastructure.persistence.repositories.csv_panel_repository import CsvPanelRepository

# 8 x 14 panel; country 1 (XAB) breaks in 2006
EXACT_BREAK = InjectedBreak(country_index=1, period=7, tau=-0.8)
# 10 x 15 panel; breaks of XAB 2005, XAE 2008 and XAH 2010
THREE_BREAKS = (
    InjectedBreak(country_index=1, period=6, tau=-0.8),
    InjectedBreak(country_index=4, period=9, tau=-0.6),
    InjectedBreak(country_index=7, period=11, tau=0.5),
)


@pytest.fixture
def exact_spec() -> DgpSpec:
    return DgpSpec(n_countries=8, n_periods=14, sigma=0.0, breaks=(EXACT_BREAK,), seed=11)


@pytest.fixture
def exact_panel(exact_spec):
    return SimulationService.simulate_panel(exact_spec)


@pytest.fixture
def null_panel():
    return SimulationService.simulate_panel(DgpSpec(n_countries=6, n_periods=12, sigma=0.05, seed=3))


@pytest.fixture
def three_break_spec() -> DgpSpec:
    return DgpSpec(n_countries=10, n_periods=15, sigma=0.05, breaks=THREE_BREAKS, seed=0)


@pytest.fixture
def csv_dir(tmp_path, exact_panel):
    """exact_panel written in the input CSV layout"""
    repository = CsvPanelRepository.from_directory(tmp_path)
    repository.save_panels([exact_panel.dataset])
    return tmp_path


@pytest.fixture
def make_estimate():
    def factory(
            country: str = "CHL",
            year: int = 2014,
            effect: float = -0.324,
            group: CountryGroup = CountryGroup.DEVELOPING,
            sector: Sector = Sector.TRANSPORT,
            pollutant: Pollutant = Pollutant.NOX,
            ci=None,
            eu_member: bool = False,
            window: int = 2
    ) -> BreakEstimate:
        low, high = ci or (year, year)
        return BreakEstimate(
            series_key=SeriesKey(pollutant, sector),
            country=country,
            country_index=0,
            group=group,
            eu_member=eu_member,
            break_year=year,
            tau_hat=float(np.log1p(effect)),
            se=0.05,
            p_value=0.001,
            significant=True,
            ci_low=low,
            ci_high=high,
            window_low=low - window,
            window_high=high + window,
        )
    return factory


@pytest.fixture
def make_event():
    def factory(
            country: str,
            year: int,
            instrument: str = "financing mechanism",
            category: PolicyCategory = PolicyCategory.SUBSIDY,
            sector: Sector = Sector.TRANSPORT,
            eu_wide: bool = False
    ) -> PolicyEvent:
        return PolicyEvent(
            year=year,
            country=country,
            sector=sector,
            instrument=instrument,
            action=PolicyAction.ADOPTION,
            category=category,
            eu_wide=eu_wide,
        )
    return factory
