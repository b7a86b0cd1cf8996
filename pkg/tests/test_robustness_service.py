import numpy as np
import pytest

from application.robustness_service import InteractiveFixedEffects, RobustnessService
from application.saturation_service import SaturationService
from application.simulation_service import SimulationService
from domain.model.aggregates.design_matrix import CandidateStep
from domain.model.aggregates.panel_dataset import Country, PanelDataset, SeriesKey
from domain.model.aggregates.selection import SelectionConfig
from domain.model.aggregates.simulation import DgpSpec, InjectedBreak
from domain.model.valueobjects.country_group import CountryGroup
from domain.model.valueobjects.indicator_kind import IndicatorKind
from domain.model.valueobjects.pollutant import Pollutant
from domain.model.valueobjects.sector import Sector


@pytest.fixture
def service():
    return RobustnessService()


def two_by_two(treated, donor) -> PanelDataset:
    ones = np.ones((2, 2))
    return PanelDataset(
        series_key=SeriesKey(Pollutant.NOX, Sector.TRANSPORT),
        countries=(Country("XAA", CountryGroup.DEVELOPED), Country("XAB", CountryGroup.DEVELOPED)),
        years=(2000, 2001),
        emissions=np.array([treated, donor], dtype=float),
        gdp=ones, population=ones, hdd=ones, cdd=ones,
    )


FACTOR_BREAK_YEAR = 2014


def factor_spec(**changes) -> DgpSpec:
    """15 x 22 panel with every nuisance of the model plus one common factor; XAA breaks in 2014"""
    base = DgpSpec(
        n_countries=15,
        n_periods=22,
        sigma=0.02,
        n_factors=1,
        breaks=(InjectedBreak(country_index=0, period=15, tau=-0.3),),
        seed=21,
    )
    return base.with_(**changes)


def with_spike(panel, country_index: int, period_index: int, size: float) -> PanelDataset:
    """Emissions of `panel` with one cell moved `size` log points off its noiseless path"""
    log_emissions = np.log(panel.dataset.emissions)
    log_emissions[country_index, period_index] = panel.truth.structural_log[country_index, period_index] + size
    return panel.dataset.with_emissions(np.exp(log_emissions))


class TestGammaSensitivity:
    def test_exact_break_is_stable(self, service, exact_panel):
        report = service.gamma_sensitivity(exact_panel.dataset, SelectionConfig(), gammas=(0.001, 0.01))

        assert report.jaccard == 1.0
        assert report.presence == {CandidateStep(1, 2006): (True, True)}
        payload = report.to_dict(exact_panel.dataset.country_codes)
        assert payload["retained"]["0.001"] == ["sis_XAB_2006"]

    @pytest.mark.slow
    def test_strict_gamma_keeps_a_subset(self, service, three_break_spec):
        nested = 0
        for r in range(20):
            dataset = SimulationService.simulate_panel(three_break_spec.with_(seed=300 + r)).dataset
            report = service.gamma_sensitivity(dataset, SelectionConfig(seed=r), gammas=(0.001, 0.01))
            nested += all(loose for strict, loose in report.presence.values() if strict)
        assert nested >= 18


class TestImpulseSaturation:
    def test_outlier_impulse_is_retained(self):
        panel = SimulationService.simulate_panel(DgpSpec(n_countries=10, n_periods=15, sigma=0.05, seed=8))
        dataset = with_spike(panel, 3, 7, 5 * 0.05)

        result = SaturationService().iis_search(dataset, SelectionConfig(seed=2))

        assert CandidateStep(3, 2007, IndicatorKind.IMPULSE) in result.retained_impulses
        assert result.retained_steps == ()


class TestIisStability:
    def test_reports_every_step_of_the_sis_run(self, service, null_panel):
        config = SelectionConfig(seed=1)
        sis = SaturationService().sis_search(null_panel.dataset, config)

        report = service.iis_stability(null_panel.dataset, config, sis)

        assert set(report.persistent) == set(sis.retained_steps)
        rate = report.persistence_rate
        assert rate is None or 0.0 <= rate <= 1.0
        assert all(c.kind.value == "impulse" for c in report.retained_impulses)

    def test_single_year_spike_is_an_impulse_not_a_step(self, service):
        panel = SimulationService.simulate_panel(DgpSpec(n_countries=10, n_periods=15, sigma=0.05, seed=9))
        dataset = with_spike(panel, 5, 8, 0.5)
        config = SelectionConfig(gamma=0.001, seed=4)
        sis = SaturationService().sis_search(dataset, config)

        report = service.iis_stability(dataset, config, sis)

        assert CandidateStep(5, 2008, IndicatorKind.IMPULSE) in report.retained_impulses
        assert not [s for s in report.retained_steps if s.country_index == 5]

    def test_clean_step_persists_with_few_impulses(self, service):
        spec = DgpSpec(n_countries=10, n_periods=15, sigma=0.05, breaks=(InjectedBreak(4, 8, -0.5),), seed=10)
        dataset = SimulationService.simulate_panel(spec).dataset
        config = SelectionConfig(gamma=0.001, seed=5)
        sis = SaturationService().sis_search(dataset, config)

        report = service.iis_stability(dataset, config, sis)

        assert CandidateStep(4, 2007) in sis.retained_steps
        assert report.persistent[CandidateStep(4, 2007)]
        assert len(report.retained_impulses) <= 1


class TestInteractiveFixedEffects:
    def test_objective_never_increases(self):
        rng = np.random.default_rng(0)
        y = 0.1 * rng.standard_normal((8, 12)) + 5.0 * np.outer(rng.standard_normal(8), np.linspace(-1, 1, 12))

        model = InteractiveFixedEffects(factors=1).fit(y)

        path = np.array(model.objective_path)
        assert np.all(np.diff(path) <= 1e-9 * path[:-1] + 1e-12)

    def test_zero_factors_is_two_way_fixed_effects(self):
        rng = np.random.default_rng(1)
        alpha, xi = rng.standard_normal(5), rng.standard_normal(9)
        y = alpha[:, None] + xi[None, :]

        model = InteractiveFixedEffects(factors=0).fit(y)

        assert model.objective_path[-1] == pytest.approx(0.0, abs=1e-18)


class TestGscm:
    def test_two_by_two_reduces_to_difference_in_differences(self, service):
        dataset = two_by_two([100.0, 80.0], [50.0, 55.0])

        result = service.gscm_validate(dataset, 0, 2001, factors=0, min_pretreatment=1, min_donors=1)

        assert result.mean_att == pytest.approx(np.log(0.8) - np.log(1.1), abs=1e-12)
        assert result.pre_rmse == pytest.approx(0.0, abs=1e-12)
        assert result.donors == ("XAB",)

    def test_short_pretreatment_is_flagged(self, service, exact_panel):
        result = service.gscm_validate(exact_panel.dataset, 1, 2003)

        assert result.insufficient_pretreatment
        assert result.mean_att is None
        assert result.to_dict()["att"] == []

    def test_too_few_donors_is_flagged(self, service, exact_panel):
        result = service.gscm_validate(exact_panel.dataset, 1, 2008, donors=[1, 3])

        assert result.insufficient_donors
        assert result.donors == ("XAD",)

    def test_controls_and_trends_are_taken_out(self, service):
        spec = DgpSpec(
            n_countries=12,
            n_periods=15,
            sigma=0.005,
            covariate_volatility=0.1,
            breaks=(InjectedBreak(country_index=0, period=9, tau=-0.3),),
            seed=5,
        )
        panel = SimulationService.simulate_panel(spec)

        result = service.gscm_validate(panel.dataset, 0, 2008, factors=0)

        assert result.unit_trends
        assert result.mean_att == pytest.approx(-0.3, abs=0.03)
        assert result.pre_rmse < 0.02

    def test_recovers_break_under_a_common_factor(self, service):
        panel = SimulationService.simulate_panel(factor_spec())

        result = service.gscm_validate(panel.dataset, 0, FACTOR_BREAK_YEAR)

        assert result.mean_att == pytest.approx(-0.3, abs=0.1)
        assert result.years == tuple(range(FACTOR_BREAK_YEAR, 2022))
        assert 0 <= result.factors <= 3
        assert [r for r, _ in result.cv_errors][0] == 0

    @pytest.mark.slow
    def test_effect_concordance_over_replications(self, service):
        means = []
        for r in range(100):
            panel = SimulationService.simulate_panel(factor_spec(seed=1000 + r))
            means.append(service.gscm_validate(panel.dataset, 0, FACTOR_BREAK_YEAR).mean_att)
        means = np.array(means)

        assert np.sum(np.abs(means + 0.3) <= 0.1) >= 90
        assert means.mean() == pytest.approx(-0.3, abs=0.07)

    @pytest.mark.slow
    def test_effect_concordance_at_higher_noise_without_trends(self, service):
        means = []
        for r in range(100):
            panel = SimulationService.simulate_panel(factor_spec(sigma=0.05, trend_scale=0.0, seed=2000 + r))
            result = service.gscm_validate(panel.dataset, 0, FACTOR_BREAK_YEAR, unit_trends=False)
            means.append(result.mean_att)
        means = np.array(means)

        assert np.sum(np.abs(means + 0.3) <= 0.1) >= 90
        assert means.mean() == pytest.approx(-0.3, abs=0.07)
