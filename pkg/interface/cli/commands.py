from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence
import argparse
import logging

from pydantic import BaseModel, Field, ValidationError, field_validator

from application.pipeline_service import PipelineService
from application.saturation_service import SaturationService
from application.simulation_service import SimulationService
from domain.model.aggregates.panel_dataset import SeriesKey
from domain.model.aggregates.selection import SelectionConfig
from domain.model.aggregates.simulation import DgpSpec, InjectedBreak, RecoveryCell
from domain.model.exceptions import ConvergenceError, InputError, NumericalError
from domain.model.valueobjects.pipeline_stage import PipelineStage
from domain.model.valueobjects.pollutant import Pollutant
from domain.model.valueobjects.sector import Sector
from infrastructure.persistence.configuration.run_configuration import (
    APP_NAME,
    APP_VERSION,
    RunConfig,
    load_run_config,
)
from infrastructure.persistence.repositories.csv_panel_repository import (
    COVARIATES_FILE,
    EMISSIONS_FILE,
    EU_CONTROLS_FILE,
    GROUPS_FILE,
    CsvPanelRepository,
)
from infrastructure.persistence.repositories.csv_policy_repository import POLICIES_FILE, CsvPolicyRepository
from infrastructure.reports.report_frames import recovery_frame
from infrastructure.reports.report_writer import ReportWriter

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_INPUT = 2
EXIT_NUMERICAL = 3
EXIT_NOT_CONVERGED = 4

# subcommand -> (last stage, robustness forced)
ANALYSIS_COMMANDS = {
    "detect": (PipelineStage.DETECT, False),
    "estimate": (PipelineStage.ESTIMATE, None),
    "attribute": (PipelineStage.ATTRIBUTE, None),
    "summarize": (PipelineStage.SUMMARIZE, None),
    "robustness": (PipelineStage.ESTIMATE, True),
    "pipeline": (PipelineStage.SUMMARIZE, None),
}


# DTOs (Data Transfer Objects)
class SimulateRequest(BaseModel):
    countries: int = Field(10, ge=2, le=676, description="Number of synthetic countries")
    periods: int = Field(15, ge=3, description="Number of years")
    first_year: int = Field(2000, description="First simulated year")
    sigma: float = Field(0.05, ge=0, description="Idiosyncratic noise standard deviation")
    factors: int = Field(0, ge=0, description="Latent common factors")
    eu_every: int = Field(0, ge=0, description="Every k-th developed country joins the EU (0: none)")
    breaks: List[InjectedBreak] = Field(default_factory=list, description="Injected step breaks")
    series: SeriesKey = Field(SeriesKey(Pollutant.NOX, Sector.TRANSPORT))
    seed: int = Field(0, ge=0)
    out: Path = Field(Path("simulated"))

    def to_spec(self) -> DgpSpec:
        return DgpSpec(
            n_countries=self.countries,
            n_periods=self.periods,
            first_year=self.first_year,
            sigma=self.sigma,
            n_factors=self.factors,
            eu_every=self.eu_every,
            breaks=tuple(self.breaks),
            seed=self.seed,
        )


class CalibrateRequest(BaseModel):
    countries: int = Field(10, ge=2, le=676)
    periods: int = Field(15, ge=3)
    sigma: float = Field(0.05, gt=0)
    gamma: float = Field(0.01, gt=0, lt=1)
    block_size: int = Field(20, ge=2)
    reps: int = Field(200, ge=50, description="Null replications")
    seed: int = Field(0, ge=0)
    jobs: int = Field(1, ge=1)
    recovery_taus: List[float] = Field(default_factory=list, description="Break sizes of the recovery grid")
    recovery_sigmas: List[float] = Field(default_factory=lambda: [0.05])
    recovery_post_lengths: List[int] = Field(default_factory=lambda: [5])
    recovery_reps: int = Field(100, ge=1)
    out: Path = Field(Path("calibration"))

    @field_validator("recovery_sigmas")
    @classmethod
    def _non_negative(cls, values: List[float]) -> List[float]:
        if any(v < 0 for v in values):
            raise ValueError("recovery sigmas must be non-negative")
        return values


def parse_break(text: str) -> InjectedBreak:
    """INDEX:PERIOD:TAU, country index 0-based, period 1-based"""
    try:
        index, period, tau = text.split(":")
        return InjectedBreak(int(index), int(period), float(tau))
    except ValueError:
        raise argparse.ArgumentTypeError(f"Invalid break '{text}', expected INDEX:PERIOD:TAU")


def _enum_value(enum_type):
    lookup = {member.value.lower(): member for member in enum_type}

    def convert(text: str):
        try:
            return lookup[text.strip().lower()]
        except KeyError:
            raise argparse.ArgumentTypeError(
                f"Unknown {enum_type.__name__.lower()} '{text}'; choose from {', '.join(lookup)}"
            )
    return convert


def _add_logging_flags(parser: argparse.ArgumentParser):
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="Warnings and errors only")


def _add_analysis_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", type=Path, help="Flat YAML file with RunConfig keys")
    parser.add_argument("--data-dir", type=Path, help="Directory with emissions.csv, covariates.csv, groups.csv")
    parser.add_argument("--emissions", dest="emissions_file", type=Path)
    parser.add_argument("--covariates", dest="covariates_file", type=Path)
    parser.add_argument("--groups", dest="groups_file", type=Path)
    parser.add_argument("--eu-controls", dest="eu_controls_file", type=Path)
    parser.add_argument("--policies", dest="policies_file", type=Path)
    parser.add_argument("--categories", dest="categories_file", type=Path)
    parser.add_argument("--pollutant", dest="pollutants", action="append", type=_enum_value(Pollutant),
                        help="Repeatable; default all")
    parser.add_argument("--sector", dest="sectors", action="append", type=_enum_value(Sector),
                        help="Repeatable; default all")
    parser.add_argument("--first-year", type=int)
    parser.add_argument("--last-year", type=int)
    parser.add_argument("--drop-unbalanced", action="store_const", const=True, default=None)
    parser.add_argument("--gamma", type=float, help="Per-candidate significance level (default 0.01)")
    parser.add_argument("--block-size", type=int, help="Candidates per block (default 20)")
    parser.add_argument("--seed", type=int, help="Master seed (fallback: BREAKSCOPE_SEED)")
    parser.add_argument("--window", type=int, help="Attribution window half-width in years (default 2)")
    parser.add_argument("--per-group", action="store_const", const=True, default=None,
                        help="Estimate developed and developing countries separately")
    parser.add_argument("--robustness", action="store_const", const=True, default=None,
                        help="Add gamma sensitivity, IIS stability and GSCM checks")
    parser.add_argument("--out", type=Path, help="Output directory (default out)")
    parser.add_argument("--jobs", type=int, help="Parallel workers (default 1)")
    _add_logging_flags(parser)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=APP_NAME,
        description="Structural breaks in panel emission series via step indicator saturation",
    )
    parser.add_argument("--version", action="version", version=f"{APP_NAME} {APP_VERSION}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
            ("detect", "Run step indicator saturation and write the selection"),
            ("estimate", "Detect, then estimate effects, timing intervals and counterfactuals"),
            ("attribute", "Estimate, then match breaks to policy events"),
            ("summarize", "Attribute, then write instrument, mix and combination summaries"),
            ("robustness", "Estimate, then run gamma sensitivity, IIS stability and GSCM checks"),
            ("pipeline", "Every stage; robustness with --robustness"),
    ):
        _add_analysis_flags(subparsers.add_parser(name, help=help_text))

    simulate = subparsers.add_parser("simulate", help="Generate a synthetic panel with known breaks")
    simulate.add_argument("--countries", type=int, default=10)
    simulate.add_argument("--periods", type=int, default=15)
    simulate.add_argument("--first-year", type=int, default=2000)
    simulate.add_argument("--sigma", type=float, default=0.05)
    simulate.add_argument("--factors", type=int, default=0)
    simulate.add_argument("--eu-every", type=int, default=0)
    simulate.add_argument("--break", dest="breaks", action="append", type=parse_break, default=[],
                          help="INDEX:PERIOD:TAU, repeatable")
    simulate.add_argument("--series", type=str, default="NOx.transport", help="Series label to generate")
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("--out", type=Path, default=Path("simulated"))
    _add_logging_flags(simulate)

    calibrate = subparsers.add_parser("calibrate", help="False-positive calibration and recovery benchmark")
    calibrate.add_argument("--countries", type=int, default=10)
    calibrate.add_argument("--periods", type=int, default=15)
    calibrate.add_argument("--sigma", type=float, default=0.05)
    calibrate.add_argument("--gamma", type=float, default=0.01)
    calibrate.add_argument("--block-size", type=int, default=20)
    calibrate.add_argument("--reps", type=int, default=200)
    calibrate.add_argument("--seed", type=int, default=0)
    calibrate.add_argument("--jobs", type=int, default=1)
    calibrate.add_argument("--recovery-tau", dest="recovery_taus", type=float, nargs="+", default=[])
    calibrate.add_argument("--recovery-sigma", dest="recovery_sigmas", type=float, nargs="+", default=[0.05])
    calibrate.add_argument("--recovery-post", dest="recovery_post_lengths", type=int, nargs="+", default=[5])
    calibrate.add_argument("--recovery-reps", type=int, default=100)
    calibrate.add_argument("--out", type=Path, default=Path("calibration"))
    _add_logging_flags(calibrate)

    return parser


RUN_CONFIG_FLAGS = (
    "data_dir", "emissions_file", "covariates_file", "groups_file", "eu_controls_file", "policies_file",
    "categories_file", "pollutants", "sectors", "first_year", "last_year", "drop_unbalanced", "gamma",
    "block_size", "seed", "window", "per_group", "robustness", "out", "jobs",
)


def run_config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {name: getattr(args, name) for name in RUN_CONFIG_FLAGS}
    return load_run_config(args.config, overrides)


def run_analysis(args: argparse.Namespace) -> int:
    config = run_config_from_args(args)
    until, robustness = ANALYSIS_COMMANDS[args.command]

    logger.info("=" * 60)
    logger.info(f"{APP_NAME} {APP_VERSION} - {args.command}")
    logger.info("=" * 60)
    logger.info(f"Series: {', '.join(k.label for k in config.series_keys)}")
    logger.info(f"gamma={config.gamma}, block_size={config.block_size}, seed={config.seed}, "
                f"window={config.window}, per_group={config.per_group}, jobs={config.jobs}")
    logger.info(f"Output: {config.out}")
    logger.info("=" * 60)

    panels = CsvPanelRepository(
        emissions_file=config.input_path("emissions_file", EMISSIONS_FILE),
        covariates_file=config.input_path("covariates_file", COVARIATES_FILE),
        groups_file=config.input_path("groups_file", GROUPS_FILE),
        eu_controls_file=config.input_path("eu_controls_file", EU_CONTROLS_FILE, required=False),
    )
    policies = None
    if until.reaches(PipelineStage.ATTRIBUTE):
        policies = CsvPolicyRepository(
            config.input_path("policies_file", POLICIES_FILE, required=False), config.categories_file
        )
    service = PipelineService(panels, policies, window=config.window)
    result = service.run_pipeline(config, ReportWriter(config.out), until=until, robustness=robustness)

    logger.info("=" * 60)
    logger.info(f"Finished: {len(result.estimates)} breaks, {len(result.artifacts)} artifacts, "
                f"status {result.status}")
    logger.info("=" * 60)
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def run_simulate(args: argparse.Namespace) -> int:
    try:
        series = SeriesKey.parse(args.series)
    except ValueError as e:
        raise InputError(str(e)) from e
    request = SimulateRequest(
        countries=args.countries, periods=args.periods, first_year=args.first_year, sigma=args.sigma,
        factors=args.factors, eu_every=args.eu_every, breaks=args.breaks, series=series,
        seed=args.seed, out=args.out,
    )
    try:
        spec = request.to_spec()
    except ValueError as e:
        raise InputError(str(e)) from e
    panel = SimulationService.simulate_panel(spec, series_key=request.series)

    out = request.out
    repository = CsvPanelRepository(
        emissions_file=out / EMISSIONS_FILE,
        covariates_file=out / COVARIATES_FILE,
        groups_file=out / GROUPS_FILE,
        eu_controls_file=out / EU_CONTROLS_FILE,
    )
    repository.save_panels([panel.dataset])
    truth = repository.save_truth(panel.truth.breaks, panel.dataset.country_codes)
    logger.info(f"Simulated {request.series.label}: {spec.n_countries} x {spec.n_periods}, "
                f"{len(spec.breaks)} breaks -> {out} (truth in {truth.name})")
    return EXIT_OK


def run_calibrate(args: argparse.Namespace) -> int:
    request = CalibrateRequest(**{name: getattr(args, name) for name in CalibrateRequest.model_fields})
    spec = DgpSpec(n_countries=request.countries, n_periods=request.periods, sigma=request.sigma, seed=request.seed)
    config = SelectionConfig(gamma=request.gamma, block_size=request.block_size, seed=request.seed)

    writer = ReportWriter(request.out)
    writer.prepare()
    simulation = SimulationService(SaturationService())
    try:
        stats = simulation.calibrate_false_positives(spec, config, request.reps, n_jobs=request.jobs)
        writer.write_json("calibration.json", {
            "replications": stats.replications,
            "n_candidates": stats.n_candidates,
            "gamma": stats.gamma,
            "mean_retained": stats.mean_retained,
            "retained_quantiles": {"q05": stats.retained_quantiles[0], "q50": stats.retained_quantiles[1],
                                   "q95": stats.retained_quantiles[2]},
            "rate_per_candidate": stats.rate_per_candidate,
            "counts": stats.counts,
        })
        if request.recovery_taus:
            cells = [
                RecoveryCell(tau=tau, sigma=sigma, post_break_length=post)
                for tau in request.recovery_taus
                for sigma in request.recovery_sigmas
                for post in request.recovery_post_lengths
            ]
            rows = simulation.recovery_benchmark(cells, spec, config, request.recovery_reps, n_jobs=request.jobs)
            writer.write_csv("recovery.csv", recovery_frame(rows))
    except Exception as e:
        writer.abort({"app": APP_NAME, "version": APP_VERSION, "status": "failed", "failure_stage": "calibrate",
                      "config": request.model_dump(mode="json"), "error": str(e)})
        raise
    writer.commit({"app": APP_NAME, "version": APP_VERSION, "status": "ok", "failure_stage": None,
                   "seed": request.seed, "config": request.model_dump(mode="json")})
    logger.info(f"Null retention rate {stats.rate_per_candidate:.4f} per candidate at gamma={request.gamma}")
    return EXIT_OK


HANDLERS: Dict[str, Callable[[argparse.Namespace], int]] = {
    **{name: run_analysis for name in ANALYSIS_COMMANDS},
    "simulate": run_simulate,
    "calibrate": run_calibrate,
}


def configure_verbosity(args: argparse.Namespace):
    if getattr(args, "verbose", False):
        logging.getLogger().setLevel(logging.DEBUG)
    elif getattr(args, "quiet", False):
        logging.getLogger().setLevel(logging.WARNING)


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse, dispatch and map failures to exit codes"""
    args = build_parser().parse_args(argv)
    configure_verbosity(args)
    try:
        return HANDLERS[args.command](args)
    except (InputError, ValidationError, FileNotFoundError) as e:
        logger.error(f"Input error: {e}")
        return EXIT_INPUT
    except ConvergenceError as e:
        logger.error(f"Did not converge: {e}")
        return EXIT_NOT_CONVERGED
    except NumericalError as e:
        logger.error(f"Numerical failure: {e}")
        return EXIT_NUMERICAL
    except Exception as e:
        logger.error(f"Unexpected error: {e}", exc_info=True)
        return EXIT_UNEXPECTED
