import numpy as np
import pytest

from application.saturation_service import SaturationService
from application.simulation_service import SimulationService
from domain.model.aggregates.design_matrix import CandidateStep
from domain.model.aggregates.selection import SelectionConfig
from domain.services.design_builder import build_forced, step_candidates

TRUE_STEP = CandidateStep(1, 2006)


@pytest.fixture
def service():
    return SaturationService()


class TestPartitionBlocks:
    candidates = [CandidateStep(j, year) for j in range(41) for year in range(2001, 2022)]

    def test_block_count_and_coverage(self):
        blocks = SaturationService.partition_blocks(self.candidates, SelectionConfig(block_size=20, seed=5))

        assert len(self.candidates) == 861
        assert len(blocks) == 44
        assert all(len(b) == 20 for b in blocks[:-1])
        assert len(blocks[-1]) == 1
        flattened = [c for b in blocks for c in b]
        assert sorted(flattened) == sorted(self.candidates)
        assert all(b == sorted(b) for b in blocks)

    def test_seed_controls_partition(self):
        first = SaturationService.partition_blocks(self.candidates, SelectionConfig(seed=1))
        again = SaturationService.partition_blocks(list(reversed(self.candidates)), SelectionConfig(seed=1))
        other = SaturationService.partition_blocks(self.candidates, SelectionConfig(seed=2))

        assert first == again
        assert first != other

    def test_empty(self):
        assert SaturationService.partition_blocks([], SelectionConfig()) == []


class TestGetsSelect:
    def test_keeps_only_the_true_step(self, service, exact_panel):
        dataset = exact_panel.dataset
        candidates = [
            CandidateStep(1, 2004), TRUE_STEP, CandidateStep(1, 2008),
            CandidateStep(3, 2005), CandidateStep(6, 2010),
        ]

        outcome = service.gets_select(dataset, build_forced(dataset), candidates, SelectionConfig())

        assert outcome.survivors == (TRUE_STEP,)
        assert outcome.record.candidates == tuple(sorted(candidates))
        assert outcome.record.p_values[1] < 1e-6
        assert outcome.terminals >= 1

    def test_nothing_to_find_on_pure_fixed_effects(self, service, exact_panel):
        dataset = exact_panel.dataset.with_emissions(np.exp(exact_panel.truth.structural_log))

        outcome = service.gets_select(
            dataset, build_forced(dataset), [CandidateStep(0, 2003), CandidateStep(4, 2009)], SelectionConfig()
        )

        assert outcome.survivors == ()

    def test_zero_candidates(self, service, exact_panel):
        dataset = exact_panel.dataset

        outcome = service.gets_select(dataset, build_forced(dataset), [], SelectionConfig())

        assert outcome.survivors == ()
        assert outcome.fits == 1


class TestSisSearch:
    def test_trends_alone_leave_nothing(self, service, exact_panel):
        dataset = exact_panel.dataset.with_emissions(np.exp(exact_panel.truth.structural_log))

        result = service.sis_search(dataset, SelectionConfig())

        assert result.retained == ()
        assert result.converged
        assert result.iterations == 1

    def test_recovers_single_break_exactly(self, service, exact_panel):
        result = service.sis_search(exact_panel.dataset, SelectionConfig(gamma=0.01, block_size=20, seed=0))

        assert result.retained == (TRUE_STEP,)
        assert result.converged
        assert result.n_candidates == len(step_candidates(exact_panel.dataset))
        assert result.final_fit.stats("sis_XAB_2006").coefficient == pytest.approx(-0.8, abs=1e-6)
        assert result.break_times() == {1: [2006]}

    def test_trace_covers_blocks_and_union(self, service, exact_panel):
        result = service.sis_search(exact_panel.dataset, SelectionConfig(seed=4))

        stages = {record.stage for record in result.trace}
        assert {"block", "union"} <= stages
        assert len(result.union_history) == result.iterations
        assert TRUE_STEP in result.union_history[-1]
        first_iteration = [r for r in result.trace if r.stage == "block" and r.iteration == 1]
        covered = [c for r in first_iteration for c in r.candidates]
        assert sorted(covered) == step_candidates(exact_panel.dataset)

    def test_deterministic(self, service, null_panel):
        config = SelectionConfig(seed=9)
        first = service.sis_search(null_panel.dataset, config)
        second = service.sis_search(null_panel.dataset, config)

        assert first.retained == second.retained
        assert [r.to_dict(null_panel.dataset.country_codes) for r in first.trace] == \
               [r.to_dict(null_panel.dataset.country_codes) for r in second.trace]

    def test_null_panel_keeps_few_steps(self, service, null_panel):
        result = service.sis_search(null_panel.dataset, SelectionConfig(gamma=0.01, seed=0))

        assert len(result.retained) < 10
        assert result.final_fit is not None

    @pytest.mark.slow
    def test_parallel_blocks_match_serial(self, service, null_panel):
        serial = service.sis_search(null_panel.dataset, SelectionConfig(seed=2, n_jobs=1))
        parallel = service.sis_search(null_panel.dataset, SelectionConfig(seed=2, n_jobs=2))

        assert serial.retained == parallel.retained
        assert len(serial.trace) == len(parallel.trace)

    @pytest.mark.slow
    def test_recovers_three_breaks_exactly(self, service, three_break_spec):
        found, injected = 0, 0
        for r in range(20):
            panel = SimulationService.simulate_panel(three_break_spec.with_(seed=400 + r))
            result = service.sis_search(panel.dataset, SelectionConfig(seed=r))
            injected += len(panel.truth.breaks)
            found += sum(step in result.retained_steps for step, _ in panel.truth.breaks)

        assert injected == 60
        assert found >= 54
