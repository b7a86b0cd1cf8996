from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, Tuple

import numpy as np
import pandas as pd

from domain.model.exceptions import PanelValidationError
from domain.model.valueobjects.country_group import CountryGroup
from domain.model.valueobjects.pollutant import Pollutant
from domain.model.valueobjects.sector import Sector

COVARIATE_NAMES = ("gdp", "population", "hdd", "cdd")


@dataclass(frozen=True)
class SeriesKey:
    pollutant: Pollutant
    sector: Sector

    def __post_init__(self):
        if not isinstance(self.pollutant, Pollutant) or not isinstance(self.sector, Sector):
            raise ValueError("SeriesKey needs a Pollutant and a Sector")

    def __lt__(self, other: "SeriesKey") -> bool:
        return self.label < other.label

    @property
    def label(self) -> str:
        return f"{self.pollutant.value}.{self.sector.value}"

    @classmethod
    def parse(cls, text: str) -> "SeriesKey":
        """Parse 'NOx.buildings' style labels"""
        try:
            pollutant, sector = text.split(".", 1)
            return cls(Pollutant(pollutant), Sector(sector))
        except ValueError as e:
            raise ValueError(f"Invalid series label '{text}', expected <pollutant>.<sector>") from e

    @classmethod
    def all(cls) -> Tuple["SeriesKey", ...]:
        return tuple(cls(p, s) for p in Pollutant for s in Sector)


@dataclass(frozen=True)
class Country:
    iso3: str
    group: CountryGroup
    eu_member: bool = False

    def __post_init__(self):
        if not self.iso3 or len(self.iso3) != 3 or not self.iso3.isalpha():
            raise ValueError(f"Country code must be ISO-3, got '{self.iso3}'")
        object.__setattr__(self, "iso3", self.iso3.upper())


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Balanced country x year panel of one (pollutant, sector) emission series.

    Arrays are (N, T): rows follow `countries` (ISO ascending), columns follow `years`.
    """
    series_key: SeriesKey
    countries: Tuple[Country, ...]
    years: Tuple[int, ...]
    emissions: np.ndarray
    gdp: np.ndarray
    population: np.ndarray
    hdd: np.ndarray
    cdd: np.ndarray
    eu_controls: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        codes = [c.iso3 for c in self.countries]
        if not codes:
            raise PanelValidationError("Panel has no countries")
        if codes != sorted(codes) or len(set(codes)) != len(codes):
            raise PanelValidationError("Countries must be unique and sorted by ISO code")
        years = list(self.years)
        if len(years) < 2 or years != list(range(years[0], years[0] + len(years))):
            raise PanelValidationError("Years must be a consecutive range of at least two periods")

        shape = (len(codes), len(years))
        for name in ("emissions",) + COVARIATE_NAMES:
            values = np.array(getattr(self, name), dtype=float)
            if values.shape != shape:
                raise PanelValidationError(f"{name} has shape {values.shape}, expected {shape}")
            self._check_positive(name, values)
            values.setflags(write=False)
            object.__setattr__(self, name, values)

        controls = {}
        for name in sorted(self.eu_controls):
            values = np.array(self.eu_controls[name], dtype=float)
            if values.shape != shape:
                raise PanelValidationError(f"EU control '{name}' has shape {values.shape}, expected {shape}")
            values.setflags(write=False)
            controls[name] = values
        object.__setattr__(self, "eu_controls", controls)

    def _check_positive(self, name: str, values: np.ndarray):
        bad = np.argwhere(~(np.isfinite(values) & (values > 0)))
        if len(bad):
            i, t = bad[0]
            raise PanelValidationError(
                f"Non-positive {name} for ({self.countries[i].iso3}, {self.years[t]}): {values[i, t]}"
            )

    @property
    def n_countries(self) -> int:
        return len(self.countries)

    @property
    def n_periods(self) -> int:
        return len(self.years)

    @property
    def n_rows(self) -> int:
        return self.n_countries * self.n_periods

    @property
    def t_first(self) -> int:
        return self.years[0]

    @property
    def t_last(self) -> int:
        return self.years[-1]

    @property
    def log_emissions(self) -> np.ndarray:
        """Response vector in (country, year) row order"""
        return np.log(self.emissions).ravel()

    @property
    def country_codes(self) -> Tuple[str, ...]:
        return tuple(c.iso3 for c in self.countries)

    def country_index(self, iso3: str) -> int:
        try:
            return self.country_codes.index(iso3.upper())
        except ValueError:
            raise KeyError(f"Country {iso3} not in panel {self.series_key.label}")

    def period_index(self, year: int) -> int:
        if not self.t_first <= year <= self.t_last:
            raise KeyError(f"Year {year} outside [{self.t_first}, {self.t_last}]")
        return year - self.t_first

    def groups(self) -> Tuple[CountryGroup, ...]:
        """Groups present in the panel, in enum order"""
        present = {c.group for c in self.countries}
        return tuple(g for g in CountryGroup if g in present)

    def subset(self, iso_codes: Iterable[str]) -> "PanelDataset":
        keep = sorted(set(iso_codes))
        index = [self.country_index(code) for code in keep]
        return replace(
            self,
            countries=tuple(self.countries[i] for i in index),
            emissions=self.emissions[index],
            gdp=self.gdp[index],
            population=self.population[index],
            hdd=self.hdd[index],
            cdd=self.cdd[index],
            eu_controls={k: v[index] for k, v in self.eu_controls.items()},
        )

    def with_emissions(self, emissions: np.ndarray) -> "PanelDataset":
        return replace(self, emissions=np.asarray(emissions, dtype=float))

    def to_frame(self) -> pd.DataFrame:
        """Long frame with one row per (country, year)"""
        n, t = self.n_countries, self.n_periods
        frame = pd.DataFrame({
            "country_iso3": np.repeat(self.country_codes, t),
            "year": np.tile(self.years, n),
            "emissions_t": self.emissions.ravel(),
            "gdp_usd2015": self.gdp.ravel(),
            "population": self.population.ravel(),
            "hdd16": self.hdd.ravel(),
            "cdd18": self.cdd.ravel(),
        })
        for name, values in self.eu_controls.items():
            frame[name] = values.ravel()
        return frame
