from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple
import logging

from joblib import Parallel, delayed

from application.attribution_service import AttributionService
from application.effects_service import EffectsService, SparseFit
from application.robustness_service import RobustnessService
from application.saturation_service import SaturationService
from domain.model.aggregates.break_estimate import BreakEstimate, BreakSummaryRow, PollutantTotal
from domain.model.aggregates.panel_dataset import PanelDataset, SeriesKey
from domain.model.aggregates.policy_event import ComboShareRow, MatchedBreak, MixRow, SummaryRow
from domain.model.aggregates.selection import SelectionResult
from domain.model.valueobjects.pipeline_stage import PipelineStage
from domain.repository.panel_repository import PanelRepository, PolicyRepository
from infrastructure.persistence.configuration.run_configuration import APP_NAME, APP_VERSION, RunConfig
from infrastructure.reports import report_frames
from infrastructure.reports.report_writer import ReportWriter

logger = logging.getLogger(__name__)

POOLED = "pooled"


@dataclass(frozen=True, eq=False)
class SeriesPart:
    """One estimation sample: the whole series, or one country group in per-group mode"""
    label: str
    dataset: PanelDataset
    selection: SelectionResult
    sparse: Optional[SparseFit] = None
    robustness: Optional[Dict] = None


@dataclass(frozen=True, eq=False)
class SeriesAnalysis:
    series_key: SeriesKey
    parts: Tuple[SeriesPart, ...]

    @property
    def converged(self) -> bool:
        return all(p.selection.converged for p in self.parts)

    @property
    def estimates(self) -> Tuple[BreakEstimate, ...]:
        return tuple(e for p in self.parts if p.sparse for e in p.sparse.estimates)


@dataclass(frozen=True, eq=False)
class PipelineResult:
    until: PipelineStage
    robustness: bool
    analyses: Tuple[SeriesAnalysis, ...]
    estimates: Tuple[BreakEstimate, ...] = ()
    deduplicated: Tuple[BreakEstimate, ...] = ()
    matches: Tuple[MatchedBreak, ...] = ()
    summaries: Tuple[SummaryRow, ...] = ()
    summaries_by_pollutant: Dict[str, Tuple[SummaryRow, ...]] = field(default_factory=dict)
    mix_rows: Tuple[MixRow, ...] = ()
    combo_rows: Tuple[ComboShareRow, ...] = ()
    totals: Tuple[PollutantTotal, ...] = ()
    break_summary: Tuple[BreakSummaryRow, ...] = ()
    artifacts: Dict[str, str] = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return all(a.converged for a in self.analyses)

    @property
    def status(self) -> str:
        return "ok" if self.converged else "not_converged"


def _analyze_series(
        dataset: PanelDataset,
        config: RunConfig,
        n_jobs: int,
        until: PipelineStage,
        robustness: bool,
        saturation: SaturationService,
        effects: EffectsService,
        checks: RobustnessService
) -> SeriesAnalysis:
    """Selection, sparse estimation and optional robustness checks of one series"""
    selection_config = config.selection_config(n_jobs=n_jobs)
    if config.per_group:
        samples = [
            (group.value, dataset.subset(c.iso3 for c in dataset.countries if c.group == group))
            for group in dataset.groups()
        ]
    else:
        samples = [(POOLED, dataset)]

    parts = []
    for label, sample in samples:
        stage = PipelineStage.DETECT
        try:
            selection = saturation.sis_search(sample, selection_config)
            sparse = None
            report = None
            if until.reaches(PipelineStage.ESTIMATE):
                stage = PipelineStage.ESTIMATE
                sparse = effects.fit_sparse(sample, selection)
                if robustness:
                    stage = PipelineStage.ROBUSTNESS
                    report = _robustness_report(checks, sample, selection, sparse, config)
        except Exception as e:
            if not hasattr(e, "stage"):
                e.stage = stage.value
            raise
        parts.append(SeriesPart(label, sample, selection, sparse, report))
    return SeriesAnalysis(series_key=dataset.series_key, parts=tuple(parts))


def _robustness_report(
        checks: RobustnessService,
        dataset: PanelDataset,
        selection: SelectionResult,
        sparse: SparseFit,
        config: RunConfig
) -> Dict:
    codes = dataset.country_codes
    sensitivity = checks.gamma_sensitivity(dataset, selection.config, config.sensitivity_gammas)
    stability = checks.iis_stability(dataset, selection.config, selection)
    treated = {e.country_index for e in sparse.estimates}
    donors = [j for j in range(dataset.n_countries) if j not in treated]
    gscm = []
    for estimate in sparse.estimates:
        result = checks.gscm_validate(
            dataset, estimate.country_index, estimate.break_year, donors=donors, r_max=config.gscm_max_factors,
            unit_trends=config.gscm_unit_trends
        )
        gscm.append({**result.to_dict(), "tau_hat": estimate.tau_hat})
    return {
        "gamma_sensitivity": sensitivity.to_dict(codes),
        "iis_stability": stability.to_dict(codes),
        "gscm": gscm,
    }


class PipelineService:
    """End-to-end run: load, detect, estimate, attribute, summarize and report"""

    def __init__(
            self,
            panel_repository: PanelRepository,
            policy_repository: Optional[PolicyRepository] = None,
            saturation_service: Optional[SaturationService] = None,
            effects_service: Optional[EffectsService] = None,
            attribution_service: Optional[AttributionService] = None,
            robustness_service: Optional[RobustnessService] = None,
            window: int = 2
    ):
        self._panels = panel_repository
        self._policies = policy_repository
        self._saturation = saturation_service or SaturationService()
        self._effects = effects_service or EffectsService(window=window)
        self._attribution = attribution_service or AttributionService(window=window)
        self._robustness = robustness_service or RobustnessService(self._saturation)

    def run_pipeline(
            self,
            config: RunConfig,
            writer: ReportWriter,
            until: PipelineStage = PipelineStage.SUMMARIZE,
            robustness: Optional[bool] = None
    ) -> PipelineResult:
        robustness = config.robustness if robustness is None else robustness
        writer.prepare()
        stage = PipelineStage.LOAD
        try:
            datasets = [
                self._panels.load_panel(key, config.drop_unbalanced, config.year_range)
                for key in config.series_keys
            ]

            stage = PipelineStage.DETECT
            outer_jobs, inner_jobs = (config.jobs, 1) if len(datasets) > 1 else (1, config.jobs)
            analyses = Parallel(n_jobs=outer_jobs)(
                delayed(_analyze_series)(
                    dataset, config, inner_jobs, until, robustness,
                    self._saturation, self._effects, self._robustness,
                )
                for dataset in datasets
            )
            result = PipelineResult(until=until, robustness=robustness, analyses=tuple(analyses))

            if until.reaches(PipelineStage.ESTIMATE):
                stage = PipelineStage.ESTIMATE
                estimates = tuple(sorted((e for a in analyses for e in a.estimates), key=lambda e: e.key))
                result = replace(
                    result,
                    estimates=estimates,
                    totals=tuple(self._effects.cumulative_totals(estimates)),
                    break_summary=tuple(self._effects.summarize_breaks(estimates)),
                )
            if until.reaches(PipelineStage.ATTRIBUTE):
                stage = PipelineStage.ATTRIBUTE
                result = self._attribute(result)
            if until.reaches(PipelineStage.SUMMARIZE):
                stage = PipelineStage.SUMMARIZE
                result = self._summarize(result, config)

            stage = PipelineStage.REPORT
            self.emit_reports(result, writer)
            artifacts = writer.commit(self._manifest(config, result.status, None, until, robustness))
            result = replace(result, artifacts=artifacts)
        except Exception as e:
            failure = getattr(e, "stage", stage.value)
            logger.error(f"Pipeline failed during {failure}: {e}")
            writer.abort(self._manifest(config, "failed", failure, until, robustness, error=str(e)))
            raise

        if not result.converged:
            logger.warning("Selection did not converge for at least one series; artifacts kept")
        return result

    def _attribute(self, result: PipelineResult) -> PipelineResult:
        if self._policies is None:
            logger.warning("No policy source configured; every break is unmatched")
            events = []
        else:
            events = self._policies.load_events()
        deduplicated = tuple(self._attribution.dedupe_breaks(result.estimates))
        matches = tuple(self._attribution.match_policies(deduplicated, events))
        return replace(result, deduplicated=deduplicated, matches=matches)

    def _summarize(self, result: PipelineResult, config: RunConfig) -> PipelineResult:
        by_pollutant = {}
        for pollutant in sorted({key.pollutant.value for key in config.series_keys}):
            subset = [m for m in result.matches if m.estimate.series_key.pollutant.value == pollutant]
            by_pollutant[pollutant] = tuple(self._attribution.summarize_instruments(subset))
        return replace(
            result,
            summaries=tuple(self._attribution.summarize_instruments(result.matches)),
            summaries_by_pollutant=by_pollutant,
            mix_rows=tuple(self._attribution.mix_vs_single(result.matches)),
            combo_rows=tuple(self._attribution.combo_shares(result.matches)),
        )

    def emit_reports(self, result: PipelineResult, writer: ReportWriter):
        selection = {}
        for analysis in result.analyses:
            label = analysis.series_key.label
            selection[label] = [
                report_frames.selection_payload(p.selection, p.dataset.country_codes, p.label)
                for p in analysis.parts
            ]
            records: List[Dict] = []
            for p in analysis.parts:
                records.extend(report_frames.trace_records(p.selection, p.dataset.country_codes, p.label))
            writer.write_jsonl(f"selection_trace/{label}.jsonl", records)
        writer.write_json("selection.json", selection)

        if result.until.reaches(PipelineStage.ESTIMATE):
            writer.write_csv("breaks.csv", report_frames.breaks_frame(result.estimates))
            writer.write_csv("cumulative_totals.csv", report_frames.totals_frame(result.totals))
            writer.write_csv("break_summary.csv", report_frames.break_summary_frame(result.break_summary))
            for analysis in result.analyses:
                fits = [p.sparse for p in analysis.parts]
                writer.write_json(
                    f"plotdata/{analysis.series_key.label}.json",
                    {"series": analysis.series_key.label, **report_frames.plot_payload(fits)},
                )

        if result.until.reaches(PipelineStage.ATTRIBUTE):
            writer.write_csv("attribution.csv", report_frames.attribution_frame(result.matches))

        if result.until.reaches(PipelineStage.SUMMARIZE):
            writer.write_csv("summary_instruments.csv", report_frames.summary_frame(result.summaries))
            for pollutant, rows in result.summaries_by_pollutant.items():
                writer.write_csv(f"summary_instruments_{pollutant}.csv", report_frames.summary_frame(rows))
            writer.write_csv("mix_vs_single.csv", report_frames.mix_frame(result.mix_rows))
            writer.write_csv("combo_shares.csv", report_frames.combo_frame(result.combo_rows))

        if result.robustness and result.until.reaches(PipelineStage.ESTIMATE):
            writer.write_json("robustness_report.json", {
                analysis.series_key.label: {p.label: p.robustness for p in analysis.parts}
                for analysis in result.analyses
            })

    @staticmethod
    def _manifest(
            config: RunConfig,
            status: str,
            failure_stage: Optional[str],
            until: PipelineStage,
            robustness: bool,
            error: Optional[str] = None
    ) -> Dict:
        manifest = {
            "app": APP_NAME,
            "version": APP_VERSION,
            "status": status,
            "failure_stage": failure_stage,
            "until": until.value,
            "robustness": robustness,
            "seed": config.seed,
            "config": config.model_dump(mode="json"),
        }
        if error is not None:
            manifest["error"] = error
        return manifest
