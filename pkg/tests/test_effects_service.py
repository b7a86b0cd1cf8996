from dataclasses import replace
import logging

import numpy as np
import pytest

from application.effects_service import EffectsService
from application.saturation_service import SaturationService
from application.simulation_service import SimulationService
from domain.model.aggregates.design_matrix import CandidateStep
from domain.model.aggregates.selection import SelectionConfig
from domain.model.aggregates.simulation import DgpSpec, InjectedBreak
from domain.model.valueobjects.country_group import CountryGroup
from domain.model.valueobjects.pollutant import Pollutant
from domain.model.valueobjects.sector import Sector
from domain.services.design_builder import build_design
from domain.services.least_squares import fit_ols


@pytest.fixture
def sparse(exact_panel):
    selection = SaturationService().sis_search(exact_panel.dataset, SelectionConfig())
    return EffectsService(window=2).fit_sparse(exact_panel.dataset, selection)


class TestEffectSize:
    def test_log_points_to_percent(self):
        assert EffectsService.effect_size(-0.3919) == pytest.approx(-32.42, abs=0.01)
        assert EffectsService.effect_size(0.0) == 0.0

    def test_cumulative_reduction_of_a_halving(self):
        reduction = EffectsService.cumulative_reduction(np.full(5, 100.0), -np.log(2.0), 0.0)
        assert reduction == pytest.approx((500.0, 500.0, 500.0))

    def test_reduction_bounds_are_ordered(self):
        reduction, low, high = EffectsService.cumulative_reduction(np.full(4, 50.0), -0.2, 0.05)
        assert low < reduction < high

    def test_null_break_bounds_straddle_zero(self):
        reduction, low, high = EffectsService.cumulative_reduction(np.full(3, 80.0), 0.0, 0.1)
        assert reduction == 0.0
        assert low < 0.0 < high

    def test_percent_of_a_log_ratio(self):
        for x in np.linspace(-0.9, 3.0, 40):
            assert EffectsService.effect_size(np.log1p(x)) == pytest.approx(100 * x, abs=1e-10)

    def test_bounds_widen_with_standard_error(self):
        observed = np.full(6, 120.0)
        bounds = [EffectsService.cumulative_reduction(observed, -0.25, se)[1:] for se in (0.0, 0.02, 0.05, 0.1)]
        lows, highs = zip(*bounds)

        assert np.all(np.diff(lows) < 0)
        assert np.all(np.diff(highs) > 0)

    def test_negative_window_rejected(self):
        with pytest.raises(ValueError):
            EffectsService(window=-1)


class TestSparseFit:
    def test_estimate_of_exact_break(self, sparse):
        estimate, = sparse.estimates

        assert estimate.country == "XAB"
        assert estimate.break_year == 2006
        assert estimate.group == CountryGroup.DEVELOPED
        assert estimate.tau_hat == pytest.approx(-0.8, abs=1e-6)
        assert estimate.effect_pct == pytest.approx(100 * np.expm1(-0.8), abs=1e-4)
        assert estimate.significant
        assert estimate.se_cluster is not None

    def test_timing_interval_collapses_on_exact_data(self, sparse):
        estimate, = sparse.estimates
        assert (estimate.ci_low, estimate.ci_high) == (2006, 2006)
        assert (estimate.window_low, estimate.window_high) == (2004, 2008)

    def test_counterfactual_removes_the_break(self, exact_panel, sparse):
        estimate, = sparse.estimates
        dataset = exact_panel.dataset
        k = dataset.period_index(2006)

        assert estimate.years == dataset.years[k:]
        np.testing.assert_allclose(estimate.observed, dataset.emissions[1, k:])
        np.testing.assert_allclose(estimate.counterfactual, np.exp(exact_panel.truth.no_break_log[1, k:]), rtol=1e-6)
        expected = float(np.sum(estimate.counterfactual - estimate.observed))
        assert estimate.cumulative_reduction == pytest.approx(expected, rel=1e-9)
        assert estimate.cumulative_reduction > 0

    def test_counterfactual_levels_only_change_broken_country(self, exact_panel, sparse):
        levels = sparse.counterfactual_levels()
        dataset = exact_panel.dataset

        np.testing.assert_array_equal(levels[0], dataset.emissions[0])
        np.testing.assert_allclose(levels[1], np.exp(exact_panel.truth.no_break_log[1]), rtol=1e-6)

    def test_fitted_levels_match_observed(self, exact_panel, sparse):
        np.testing.assert_allclose(sparse.fitted_levels(), exact_panel.dataset.emissions, rtol=1e-8)

    def test_insignificant_break_is_flagged_and_kept(self, exact_spec, caplog):
        panel = SimulationService.simulate_panel(exact_spec.with_(sigma=0.02))
        selection = SaturationService().sis_search(panel.dataset, SelectionConfig())
        padded = replace(selection, retained=tuple(sorted(set(selection.retained) | {CandidateStep(0, 2011)})))

        with caplog.at_level(logging.WARNING, logger="application.effects_service"):
            sparse = EffectsService().fit_sparse(panel.dataset, padded, gamma=0.001)

        estimates = {(e.country, e.break_year): e for e in sparse.estimates}
        assert not estimates[("XAA", 2011)].significant
        assert estimates[("XAB", 2006)].significant
        assert "XAA.2011" in caplog.text
        assert "flagged, kept" in caplog.text


def estimate_of(spec: DgpSpec, country: str, year: int):
    dataset = SimulationService.simulate_panel(spec).dataset
    selection = SaturationService().sis_search(dataset, SelectionConfig())
    estimates = {(e.country, e.break_year): e for e in EffectsService().fit_sparse(dataset, selection).estimates}
    return estimates.get((country, year))


def timing_width(spec: DgpSpec, step: CandidateStep) -> int:
    dataset = SimulationService.simulate_panel(spec).dataset
    design = build_design(dataset, [step])
    low, high = EffectsService().timing_ci(dataset, design, fit_ols(design), step)
    return high - low


class TestBreakAccuracy:
    def test_effect_within_five_points_at_low_noise(self):
        spec = DgpSpec(sigma=0.02, breaks=(InjectedBreak(4, 8, -0.4),), seed=7)

        estimate = estimate_of(spec, "XAE", 2007)

        assert estimate is not None
        assert estimate.tau_hat == pytest.approx(-0.4, abs=0.05)

    @pytest.mark.slow
    def test_effect_accuracy_at_moderate_noise(self):
        # country trends leave about 0.05 of standard error on fifteen years at sigma 0.05
        taus, covered = [], 0
        for r in range(30):
            spec = DgpSpec(sigma=0.05, breaks=(InjectedBreak(4, 8, -0.4),), seed=600 + r)
            estimate = estimate_of(spec, "XAE", 2007)
            if estimate is None:
                continue
            taus.append(estimate.tau_hat)
            covered += abs(estimate.tau_hat + 0.4) <= 2.576 * estimate.se

        assert len(taus) >= 24
        assert covered >= 0.9 * len(taus)
        assert np.mean(taus) == pytest.approx(-0.4, abs=0.05)

    def test_timing_interval_widens_with_noise(self):
        step = CandidateStep(4, 2007)
        widths = {
            sigma: sum(
                timing_width(DgpSpec(sigma=sigma, breaks=(InjectedBreak(4, 8, -0.2),), seed=seed), step)
                for seed in range(3)
            )
            for sigma in (0.02, 0.1)
        }

        assert widths[0.1] > widths[0.02]


class TestTotals:
    def test_cumulative_totals_per_pollutant(self, make_estimate):
        estimates = [
            make_estimate(country="CHL", pollutant=Pollutant.NOX),
            make_estimate(country="DEU", pollutant=Pollutant.NOX),
            make_estimate(country="FRA", pollutant=Pollutant.CO),
        ]
        estimates = [
            replace(e, cumulative_reduction=10.0, cumulative_low=5.0, cumulative_high=15.0) for e in estimates
        ]

        totals = EffectsService.cumulative_totals(estimates)

        assert [t.pollutant for t in totals] == ["CO", "NOx"]
        nox = totals[1]
        assert (nox.n_breaks, nox.reduction_t, nox.low_t, nox.high_t) == (2, 20.0, 10.0, 30.0)

    def test_break_summary_groups(self, make_estimate):
        estimates = [
            make_estimate(country="CHL", effect=-0.2, group=CountryGroup.DEVELOPING),
            make_estimate(country="MEX", effect=-0.4, group=CountryGroup.DEVELOPING),
            make_estimate(country="DEU", effect=-0.1, group=CountryGroup.DEVELOPED, sector=Sector.BUILDINGS),
        ]

        rows = EffectsService.summarize_breaks(estimates)

        developing = [r for r in rows if r.group == CountryGroup.DEVELOPING.value]
        assert len(rows) == 2
        assert developing[0].n_breaks == 2
        assert developing[0].mean_effect_pct == pytest.approx(-30.0)
