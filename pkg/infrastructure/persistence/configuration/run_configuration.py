import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from domain.model.aggregates.panel_dataset import SeriesKey
from domain.model.aggregates.selection import SelectionConfig
from domain.model.exceptions import InputError
from domain.model.valueobjects.pollutant import Pollutant
from domain.model.valueobjects.sector import Sector
import logging

logger = logging.getLogger(__name__)

APP_NAME = "breakscope"
APP_VERSION = "1.0.0"
SEED_ENV = "BREAKSCOPE_SEED"


class RunConfig(BaseModel):
    """Every knob of one pipeline run; echoed verbatim into the manifest"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    data_dir: Optional[Path] = Field(None, description="Directory holding emissions.csv, covariates.csv, groups.csv")
    emissions_file: Optional[Path] = Field(None, description="Long emissions CSV")
    covariates_file: Optional[Path] = Field(None, description="Long covariates CSV")
    groups_file: Optional[Path] = Field(None, description="Country group table")
    eu_controls_file: Optional[Path] = Field(None, description="EU-wide control variables")
    policies_file: Optional[Path] = Field(None, description="Policy events CSV")
    categories_file: Optional[Path] = Field(None, description="Instrument to category table")

    pollutants: List[Pollutant] = Field(default_factory=lambda: list(Pollutant))
    sectors: List[Sector] = Field(default_factory=lambda: list(Sector))
    first_year: Optional[int] = Field(None, description="First year of the panel (default 2000 when present)")
    last_year: Optional[int] = Field(None, description="Last year of the panel (default 2021 when present)")
    drop_unbalanced: bool = Field(False, description="Drop countries with missing cells instead of failing")

    gamma: float = Field(0.01, gt=0, lt=1, description="Per-candidate significance level")
    block_size: int = Field(20, ge=2, description="Candidates per Gets block")
    seed: int = Field(0, ge=0, description="Master seed for block partitions")
    max_outer_iterations: int = Field(10, ge=1)
    max_paths: int = Field(8, ge=1)
    window: int = Field(2, ge=0, description="Attribution window half-width in years")
    per_group: bool = Field(False, description="Estimate developed and developing panels separately")

    robustness: bool = Field(False, description="Run gamma sensitivity, IIS stability and GSCM checks")
    sensitivity_gammas: List[float] = Field(default_factory=lambda: [0.001, 0.01])
    gscm_max_factors: int = Field(3, ge=0)
    gscm_unit_trends: bool = Field(True, description="Country trends in the synthetic-control model")

    out: Path = Field(Path("out"), description="Output directory")
    jobs: int = Field(1, ge=1, description="Parallel workers")

    @model_validator(mode="after")
    def _check(self) -> "RunConfig":
        if not self.pollutants or not self.sectors:
            raise ValueError("Select at least one pollutant and one sector")
        if any(not 0 < g < 1 for g in self.sensitivity_gammas) or len(self.sensitivity_gammas) < 2:
            raise ValueError("sensitivity_gammas needs two or more levels in (0, 1)")
        if self.data_dir is None and not (self.emissions_file and self.covariates_file and self.groups_file):
            raise ValueError("Give data_dir or emissions_file, covariates_file and groups_file")
        if (self.first_year is None) != (self.last_year is None):
            raise ValueError("first_year and last_year go together")
        if self.first_year is not None and self.last_year <= self.first_year:
            raise ValueError("last_year must be after first_year")
        return self

    @property
    def series_keys(self) -> Tuple[SeriesKey, ...]:
        return tuple(sorted(SeriesKey(p, s) for p in self.pollutants for s in self.sectors))

    @property
    def year_range(self) -> Optional[Tuple[int, int]]:
        if self.first_year is None:
            return None
        return self.first_year, self.last_year

    def selection_config(self, n_jobs: int = 1) -> SelectionConfig:
        return SelectionConfig(
            gamma=self.gamma,
            block_size=self.block_size,
            seed=self.seed,
            max_outer_iterations=self.max_outer_iterations,
            max_paths=self.max_paths,
            n_jobs=n_jobs,
        )

    def input_path(self, name: str, default_file: str, required: bool = True) -> Optional[Path]:
        """Explicit path, else `default_file` inside data_dir (optional inputs only when present)"""
        explicit = getattr(self, name)
        if explicit is not None:
            return explicit
        if self.data_dir is None:
            return None
        candidate = self.data_dir / default_file
        return candidate if required or candidate.is_file() else None


def read_config_file(path: Path) -> Dict[str, Any]:
    """Flat YAML mapping whose keys are RunConfig field names"""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise InputError(f"Config file {path.name} is not valid YAML: {e}") from e
    if not isinstance(raw, dict):
        raise InputError(f"Config file {path.name} must be a key-value mapping")
    nested = [k for k, v in raw.items() if isinstance(v, dict)]
    if nested:
        raise InputError(f"Config file {path.name} must be flat; nested keys: {nested}")
    return raw


def load_run_config(config_file: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """defaults < config file < BREAKSCOPE_SEED (seed only) < overrides"""
    values: Dict[str, Any] = read_config_file(config_file) if config_file else {}
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}

    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None and "seed" not in values and "seed" not in overrides:
        try:
            values["seed"] = int(env_seed)
        except ValueError:
            raise InputError(f"{SEED_ENV} must be an integer, got '{env_seed}'")
        logger.info(f"Seed {values['seed']} taken from {SEED_ENV}")

    values.update(overrides)
    return RunConfig(**values)
