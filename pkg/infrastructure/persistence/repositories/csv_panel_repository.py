from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple
import logging

import numpy as np
import pandas as pd

from domain.model.aggregates.design_matrix import CandidateStep
from domain.model.aggregates.panel_dataset import Country, PanelDataset, SeriesKey
from domain.model.exceptions import InputError, PanelValidationError
from domain.model.valueobjects.country_group import CountryGroup
from domain.model.valueobjects.pollutant import Pollutant
from domain.model.valueobjects.sector import Sector
from domain.repository.panel_repository import PanelRepository
from infrastructure.persistence.models.panel_schema import (
    COVARIATE_FIELDS,
    COVARIATES_COLUMNS,
    EMISSIONS_COLUMNS,
    EU_CONTROLS_COLUMNS,
    FALSE_VALUES,
    GROUPS_COLUMNS,
    TRUE_VALUES,
    TRUTH_COLUMNS,
)

logger = logging.getLogger(__name__)

DEFAULT_YEAR_RANGE = (2000, 2021)
DATA_FLOAT_FORMAT = "%.17g"
KEY = ["country_iso3", "year"]

EMISSIONS_FILE = "emissions.csv"
COVARIATES_FILE = "covariates.csv"
GROUPS_FILE = "groups.csv"
EU_CONTROLS_FILE = "eu_controls.csv"
TRUTH_FILE = "truth.csv"


def read_table(path: Path, columns: Sequence[str]) -> pd.DataFrame:
    """Read a UTF-8 CSV and check its header; an empty file gives an empty frame"""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Input file not found: {path}")
    try:
        frame = pd.read_csv(path, encoding="utf-8", dtype={"country_iso3": str}, skipinitialspace=True,
                            float_precision="round_trip")
    except pd.errors.EmptyDataError:
        return pd.DataFrame(columns=list(columns))
    except UnicodeDecodeError as e:
        raise InputError(f"{path.name} is not valid UTF-8: {e}") from e

    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise InputError(f"{path.name} is missing columns {missing}")
    if "country_iso3" in frame.columns:
        frame["country_iso3"] = frame["country_iso3"].astype(str).str.strip().str.upper()
    if "year" in frame.columns and len(frame):
        years = pd.to_numeric(frame["year"], errors="coerce")
        if years.isna().any() or (years % 1 != 0).any():
            raise InputError(f"{path.name} has non-integer years")
        frame["year"] = years.astype(int)
    return frame


def parse_flag(value, where: str) -> bool:
    text = str(value).strip().lower()
    if text in ("nan", "none"):
        text = ""
    if text in TRUE_VALUES:
        return True
    if text in FALSE_VALUES:
        return False
    raise InputError(f"Invalid boolean '{value}' in {where}")


def _first_duplicate(frame: pd.DataFrame, columns: List[str]) -> Optional[Tuple]:
    dupes = frame[frame.duplicated(columns, keep=False)]
    if dupes.empty:
        return None
    return tuple(dupes.iloc[0][columns])


class CsvPanelRepository(PanelRepository):
    """Flat-file panel source: emissions, covariates, country groups and optional EU controls"""

    def __init__(
            self,
            emissions_file: Path,
            covariates_file: Path,
            groups_file: Path,
            eu_controls_file: Optional[Path] = None
    ):
        self.emissions_file = Path(emissions_file)
        self.covariates_file = Path(covariates_file)
        self.groups_file = Path(groups_file)
        self.eu_controls_file = Path(eu_controls_file) if eu_controls_file else None
        self._cache: Dict[str, pd.DataFrame] = {}

    @classmethod
    def from_directory(cls, directory: Path) -> "CsvPanelRepository":
        directory = Path(directory)
        eu_controls = directory / EU_CONTROLS_FILE
        return cls(
            emissions_file=directory / EMISSIONS_FILE,
            covariates_file=directory / COVARIATES_FILE,
            groups_file=directory / GROUPS_FILE,
            eu_controls_file=eu_controls if eu_controls.is_file() else None,
        )

    def _table(self, name: str, path: Path, columns: Sequence[str]) -> pd.DataFrame:
        if name not in self._cache:
            self._cache[name] = read_table(path, columns)
        return self._cache[name]

    def _countries(self) -> Dict[str, Country]:
        frame = self._table("groups", self.groups_file, GROUPS_COLUMNS)
        duplicate = _first_duplicate(frame, ["country_iso3"])
        if duplicate:
            raise InputError(f"Country {duplicate[0]} listed twice in {self.groups_file.name}")
        countries = {}
        for row in frame.itertuples(index=False):
            where = f"{self.groups_file.name} ({row.country_iso3})"
            try:
                group = CountryGroup(str(row.group).strip().lower())
            except ValueError:
                raise InputError(f"Unknown group '{row.group}' in {where}")
            try:
                countries[row.country_iso3] = Country(row.country_iso3, group, parse_flag(row.eu_member, where))
            except ValueError as e:
                raise InputError(f"{e} in {where}") from e
        return countries

    def available_series(self) -> List[SeriesKey]:
        frame = self._table("emissions", self.emissions_file, EMISSIONS_COLUMNS)
        keys = set()
        for pollutant, sector in frame[["pollutant", "sector"]].drop_duplicates().itertuples(index=False):
            try:
                keys.add(SeriesKey(Pollutant(pollutant), Sector(sector)))
            except ValueError:
                raise InputError(f"Unknown series '{pollutant}.{sector}' in {self.emissions_file.name}")
        return sorted(keys)

    @staticmethod
    def _year_range(years: Iterable[int], year_range: Optional[Tuple[int, int]]) -> Tuple[int, ...]:
        present = set(int(y) for y in years)
        if year_range is None:
            first, last = DEFAULT_YEAR_RANGE
            if not set(range(first, last + 1)) <= present:
                first, last = min(present), max(present)
        else:
            first, last = year_range
        if last <= first:
            raise InputError(f"Year range [{first}, {last}] needs at least two periods")
        return tuple(range(first, last + 1))

    def load_panel(
            self,
            series_key: SeriesKey,
            drop_unbalanced: bool = False,
            year_range: Optional[Tuple[int, int]] = None
    ) -> PanelDataset:
        emissions = self._table("emissions", self.emissions_file, EMISSIONS_COLUMNS)
        series = emissions[
            (emissions["pollutant"] == series_key.pollutant.value) & (emissions["sector"] == series_key.sector.value)
        ]
        if series.empty:
            raise InputError(f"Series {series_key.label} not found in {self.emissions_file.name}")

        countries = self._countries()
        unknown = sorted(set(series["country_iso3"]) - set(countries))
        if unknown:
            raise InputError(f"Countries without a group in {self.groups_file.name}: {', '.join(unknown)}")

        years = self._year_range(series["year"], year_range)
        series = series[series["year"].between(years[0], years[-1])]
        covariates = self._table("covariates", self.covariates_file, COVARIATES_COLUMNS)
        covariates = covariates[covariates["year"].between(years[0], years[-1])]
        for frame, source in ((series, series_key.label), (covariates, self.covariates_file.name)):
            duplicate = _first_duplicate(frame, KEY)
            if duplicate:
                raise PanelValidationError(f"Duplicate row for ({duplicate[0]}, {duplicate[1]}) in {source}")

        codes = sorted(set(series["country_iso3"]))
        index = pd.MultiIndex.from_product([codes, years], names=KEY)
        em = series.set_index(KEY)["emissions_t"].reindex(index)
        cov = covariates.set_index(KEY)[list(COVARIATE_FIELDS)].reindex(index)
        missing = em.isna() | cov.isna().any(axis=1)

        if missing.any():
            cells = list(missing[missing].index)
            iso, year = cells[0]
            if not drop_unbalanced:
                more = f" and {len(cells) - 1} more" if len(cells) > 1 else ""
                raise PanelValidationError(
                    f"Unbalanced panel {series_key.label}: missing cell ({iso}, {year}){more}"
                )
            dropped = sorted({c for c, _ in cells})
            logger.warning(f"[{series_key.label}] dropping {len(dropped)} unbalanced countries: {', '.join(dropped)}")
            codes = [c for c in codes if c not in dropped]
            if len(codes) == 0:
                raise PanelValidationError(f"No balanced country left in {series_key.label}")
            index = pd.MultiIndex.from_product([codes, years], names=KEY)
            em = em.reindex(index)
            cov = cov.reindex(index)

        shape = (len(codes), len(years))
        arrays = {field: cov[column].to_numpy(dtype=float).reshape(shape) for column, field in COVARIATE_FIELDS.items()}
        dataset = PanelDataset(
            series_key=series_key,
            countries=tuple(countries[c] for c in codes),
            years=years,
            emissions=em.to_numpy(dtype=float).reshape(shape),
            eu_controls=self._eu_controls(index, shape),
            **arrays,
        )
        logger.info(f"[{series_key.label}] loaded {dataset.n_countries} countries x {dataset.n_periods} years "
                    f"({years[0]}-{years[-1]})")
        return dataset

    def _eu_controls(self, index: pd.MultiIndex, shape: Tuple[int, int]) -> Dict[str, np.ndarray]:
        if self.eu_controls_file is None:
            return {}
        frame = self._table("eu_controls", self.eu_controls_file, EU_CONTROLS_COLUMNS)
        controls = {}
        for name, rows in frame.groupby("control_name", sort=True):
            duplicate = _first_duplicate(rows, KEY)
            if duplicate:
                raise InputError(f"Duplicate EU control '{name}' for ({duplicate[0]}, {duplicate[1]})")
            values = rows.set_index(KEY)["value"].reindex(index).fillna(0.0)
            controls[str(name)] = values.to_numpy(dtype=float).reshape(shape)
        return controls

    def save_panels(self, datasets: Sequence[PanelDataset]) -> None:
        if not datasets:
            raise InputError("Nothing to save")
        reference = datasets[0]
        for dataset in datasets[1:]:
            if dataset.country_codes != reference.country_codes or dataset.years != reference.years:
                raise InputError("Panels saved together must share countries and years")

        self.emissions_file.parent.mkdir(parents=True, exist_ok=True)
        frames = []
        for dataset in sorted(datasets, key=lambda d: d.series_key):
            frame = dataset.to_frame()[["country_iso3", "year", "emissions_t"]]
            frame.insert(2, "sector", dataset.series_key.sector.value)
            frame.insert(3, "pollutant", dataset.series_key.pollutant.value)
            frames.append(frame)
        self._write(pd.concat(frames, ignore_index=True), self.emissions_file)

        self._write(reference.to_frame()[list(COVARIATES_COLUMNS)], self.covariates_file)
        self._write(pd.DataFrame({
            "country_iso3": reference.country_codes,
            "group": [c.group.value for c in reference.countries],
            "eu_member": [int(c.eu_member) for c in reference.countries],
        }), self.groups_file)

        if reference.eu_controls and self.eu_controls_file:
            frame = reference.to_frame()
            long = [
                pd.DataFrame({"control_name": name, "country_iso3": frame["country_iso3"],
                              "year": frame["year"], "value": frame[name]})
                for name in sorted(reference.eu_controls)
            ]
            self._write(pd.concat(long, ignore_index=True), self.eu_controls_file)
        self._cache.clear()
        logger.info(f"Saved {len(datasets)} series to {self.emissions_file.parent}")

    def save_truth(self, breaks: Sequence[Tuple[CandidateStep, float]], country_codes: Sequence[str],
                   path: Optional[Path] = None) -> Path:
        path = Path(path) if path else self.emissions_file.parent / TRUTH_FILE
        frame = pd.DataFrame(
            [(country_codes[step.country_index], step.year, tau) for step, tau in breaks],
            columns=list(TRUTH_COLUMNS),
        )
        self._write(frame, path)
        return path

    @staticmethod
    def _write(frame: pd.DataFrame, path: Path):
        frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n", float_format=DATA_FLOAT_FORMAT)
