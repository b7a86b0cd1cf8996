from string import ascii_uppercase
from typing import List, Optional, Sequence, Tuple
import logging

import numpy as np
from joblib import Parallel, delayed

from application.saturation_service import SaturationService
from domain.model.aggregates.design_matrix import CandidateStep
from domain.model.aggregates.panel_dataset import Country, PanelDataset, SeriesKey
from domain.model.aggregates.selection import SelectionConfig
from domain.model.aggregates.simulation import (
    CalibrationStats,
    DgpSpec,
    GroundTruth,
    InjectedBreak,
    RecoveryCell,
    RecoveryRow,
    SimulatedPanel,
)
from domain.model.valueobjects.country_group import CountryGroup
from domain.model.valueobjects.pollutant import Pollutant
from domain.model.valueobjects.sector import Sector

logger = logging.getLogger(__name__)

MIN_CALIBRATION_REPS = 50
EU_CONTROL_EFFECT = -0.05
SIMULATED_SERIES = SeriesKey(Pollutant.NOX, Sector.TRANSPORT)


def synthetic_codes(n: int) -> List[str]:
    """XAA, XAB, ... so ISO order equals generation order"""
    if n > 26 * 26:
        raise ValueError("At most 676 synthetic countries")
    return [f"X{ascii_uppercase[i // 26]}{ascii_uppercase[i % 26]}" for i in range(n)]


def replication_seed(master_seed: int, replication: int) -> int:
    """Counter-based substream seed, independent of execution order"""
    sequence = np.random.SeedSequence(master_seed, spawn_key=(replication,))
    return int(sequence.generate_state(1)[0])


def _geometric_walk(rng: np.random.Generator, start: np.ndarray, drift: float, volatility: float, periods: int):
    shocks = drift + volatility * rng.standard_normal((len(start), periods - 1))
    steps = np.concatenate([np.zeros((len(start), 1)), np.cumsum(shocks, axis=1)], axis=1)
    return start[:, None] + steps


class SimulationService:
    """Synthetic panels with known breaks, null calibration and recovery benchmarks"""

    def __init__(self, saturation_service: Optional[SaturationService] = None):
        self._saturation = saturation_service or SaturationService()

    @staticmethod
    def simulate_panel(spec: DgpSpec, series_key: SeriesKey = SIMULATED_SERIES) -> SimulatedPanel:
        rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
        n, t = spec.n_countries, spec.n_periods
        codes = synthetic_codes(n)

        countries = []
        for i, code in enumerate(codes):
            developing = spec.developing_every > 0 and i % spec.developing_every == spec.developing_every - 1
            group = CountryGroup.DEVELOPING if developing else CountryGroup.DEVELOPED
            eu_member = spec.eu_every > 0 and not developing and i % spec.eu_every == 0
            countries.append(Country(code, group, eu_member))

        # Covariates: log random walks with drift
        log_gdp = _geometric_walk(rng, 26.0 + 0.5 * rng.standard_normal(n), spec.covariate_drift,
                                  spec.covariate_volatility, t)
        log_pop = _geometric_walk(rng, 16.0 + 0.8 * rng.standard_normal(n), spec.covariate_drift / 2,
                                  spec.covariate_volatility / 2, t)
        log_hdd = _geometric_walk(rng, np.log(2500.0) + 0.3 * rng.standard_normal(n), 0.0,
                                  spec.covariate_volatility, t)
        log_cdd = _geometric_walk(rng, np.log(300.0) + 0.3 * rng.standard_normal(n), 0.0,
                                  spec.covariate_volatility, t)

        country_effect = spec.country_effect_scale * rng.standard_normal(n)
        group_year = spec.group_year_scale * rng.standard_normal((len(CountryGroup), t))
        trend = spec.trend_scale * rng.standard_normal(n)
        factors = rng.standard_normal((t, spec.n_factors)).cumsum(axis=0) / np.sqrt(t)
        loadings = spec.loading_scale * rng.standard_normal((n, spec.n_factors))
        noise = spec.sigma * rng.standard_normal((n, t))

        group_index = np.array([list(CountryGroup).index(c.group) for c in countries])
        centred = np.arange(t) - (t - 1) / 2.0
        b1, b2, b3, b4, b5 = spec.beta
        structural = (
            spec.base_level
            + country_effect[:, None]
            + group_year[group_index]
            + b1 * log_gdp + b2 * log_gdp ** 2 + b3 * log_pop + b4 * log_hdd + b5 * log_cdd
            + trend[:, None] * centred[None, :]
            + loadings @ factors.T
        )

        eu_controls = {}
        if any(c.eu_member for c in countries):
            ets = np.zeros((n, t))
            ets[:, t // 2:] = 1.0
            eu_controls["ets"] = ets
            members = np.array([c.eu_member for c in countries], dtype=float)[:, None]
            structural = structural + EU_CONTROL_EFFECT * ets * members

        steps = np.zeros((n, t))
        truth_breaks = []
        for injected in spec.breaks:
            steps[injected.country_index, injected.period - 1:] += injected.tau
            truth_breaks.append((CandidateStep(injected.country_index, spec.break_year(injected)), injected.tau))

        log_emissions = structural + steps + noise
        dataset = PanelDataset(
            series_key=series_key,
            countries=tuple(countries),
            years=spec.years,
            emissions=np.exp(log_emissions),
            gdp=np.exp(log_gdp),
            population=np.exp(log_pop),
            hdd=np.exp(log_hdd),
            cdd=np.exp(log_cdd),
            eu_controls=eu_controls,
        )
        truth = GroundTruth(
            breaks=tuple(sorted(truth_breaks)),
            structural_log=structural,
            no_break_log=structural + noise,
            noise=noise,
        )
        return SimulatedPanel(dataset=dataset, truth=truth, spec=spec)

    def calibrate_false_positives(
            self,
            spec: DgpSpec,
            config: SelectionConfig,
            reps: int,
            n_jobs: int = 1
    ) -> CalibrationStats:
        """Retention counts of step saturation on null panels"""
        if reps < MIN_CALIBRATION_REPS:
            raise ValueError(f"Calibration needs at least {MIN_CALIBRATION_REPS} replications, got {reps}")
        if spec.breaks:
            raise ValueError("Calibration runs on a null design; remove injected breaks")

        inner = config.with_(n_jobs=1)
        results = Parallel(n_jobs=n_jobs)(
            delayed(_null_replication)(self._saturation, spec.with_(seed=replication_seed(spec.seed, r)), inner)
            for r in range(reps)
        )
        counts = tuple(count for count, _ in results)
        n_candidates = results[0][1]
        mean = float(np.mean(counts))
        quantiles = tuple(float(q) for q in np.quantile(counts, [0.05, 0.5, 0.95]))
        logger.info(
            f"Null calibration: {reps} reps, K={n_candidates}, gamma={config.gamma}: "
            f"mean retained {mean:.3f} (rate {mean / n_candidates:.4f})"
        )
        return CalibrationStats(
            replications=reps,
            n_candidates=n_candidates,
            gamma=config.gamma,
            mean_retained=mean,
            retained_quantiles=quantiles,
            rate_per_candidate=mean / n_candidates,
            counts=counts,
        )

    def recovery_benchmark(
            self,
            cells: Sequence[RecoveryCell],
            base_spec: DgpSpec,
            config: SelectionConfig,
            reps: int,
            n_jobs: int = 1
    ) -> List[RecoveryRow]:
        """Detection power per (|tau|, sigma, post-break length) cell"""
        inner = config.with_(n_jobs=1)
        rows = []
        for cell_index, cell in enumerate(cells):
            if not 1 <= cell.post_break_length <= base_spec.n_periods - 1:
                raise ValueError(f"Post-break length {cell.post_break_length} incompatible with T={base_spec.n_periods}")
            injected = InjectedBreak(
                country_index=base_spec.n_countries // 2,
                period=base_spec.n_periods - cell.post_break_length + 1,
                tau=cell.tau,
            )
            outcomes = Parallel(n_jobs=n_jobs)(
                delayed(_recovery_replication)(
                    self._saturation,
                    base_spec.with_(
                        sigma=cell.sigma,
                        breaks=(injected,),
                        seed=replication_seed(base_spec.seed, cell_index * 1_000_003 + r),
                    ),
                    inner,
                )
                for r in range(reps)
            )
            exact = sum(1 for status, _ in outcomes if status == "exact")
            near = sum(1 for status, _ in outcomes if status in ("exact", "near"))
            errors = np.array([err for _, err in outcomes if err is not None])
            rows.append(RecoveryRow(
                cell=cell,
                replications=reps,
                exact_rate=exact / reps,
                within_one_rate=near / reps,
                missed_rate=1.0 - near / reps,
                bias=float(errors.mean()) if errors.size else None,
                rmse=float(np.sqrt(np.mean(errors ** 2))) if errors.size else None,
            ))
            logger.info(
                f"Recovery |tau|={abs(cell.tau)}, sigma={cell.sigma}, post={cell.post_break_length}: "
                f"exact {exact / reps:.2f}, +/-1 {near / reps:.2f}"
            )
        return rows


def _null_replication(service: SaturationService, spec: DgpSpec, config: SelectionConfig) -> Tuple[int, int]:
    panel = SimulationService.simulate_panel(spec)
    result = service.sis_search(panel.dataset, config)
    return len(result.retained), result.n_candidates


def _recovery_replication(
        service: SaturationService,
        spec: DgpSpec,
        config: SelectionConfig
) -> Tuple[str, Optional[float]]:
    panel = SimulationService.simulate_panel(spec)
    (true_step, tau), = panel.truth.breaks
    result = service.sis_search(panel.dataset, config)
    codes = panel.dataset.country_codes
    nearby = sorted(
        (abs(step.year - true_step.year), step)
        for step in result.retained_steps
        if step.country_index == true_step.country_index and abs(step.year - true_step.year) <= 1
    )
    if not nearby:
        return "missed", None
    distance, step = nearby[0]
    estimate = result.final_fit.stats(step.label(codes)).coefficient
    return ("exact" if distance == 0 else "near"), estimate - tau
