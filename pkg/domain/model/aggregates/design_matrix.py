from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from domain.model.valueobjects.indicator_kind import IndicatorKind


class ColumnRole(Enum):
    FORCED = "forced"
    CANDIDATE = "candidate"


@dataclass(frozen=True, order=True)
class CandidateStep:
    """Candidate indicator for country `country_index` starting (step) or only at (impulse) `year`.

    Ordering is (country_index, year, kind), the canonical candidate order.
    """
    country_index: int
    year: int
    kind: IndicatorKind = IndicatorKind.STEP

    def __post_init__(self):
        if self.country_index < 0:
            raise ValueError("country_index must be non-negative")
        if self.kind not in (IndicatorKind.STEP, IndicatorKind.IMPULSE):
            raise ValueError(f"Candidate kind must be step or impulse, got {self.kind}")

    @property
    def is_step(self) -> bool:
        return self.kind == IndicatorKind.STEP

    def label(self, country_codes: Sequence[str]) -> str:
        prefix = "sis" if self.is_step else "iis"
        return f"{prefix}_{country_codes[self.country_index]}_{self.year}"

    def to_dict(self, country_codes: Sequence[str]) -> dict:
        return {
            "kind": self.kind.value,
            "country": country_codes[self.country_index],
            "year": self.year,
        }


@dataclass(frozen=True)
class ColumnInfo:
    name: str
    role: ColumnRole
    candidate: Optional[CandidateStep] = None

    @property
    def is_forced(self) -> bool:
        return self.role == ColumnRole.FORCED


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Response plus forced and candidate columns, each column with provenance.

    Rows are ordered (country ISO ascending, year ascending).
    """
    response: np.ndarray
    forced: np.ndarray
    forced_columns: Tuple[ColumnInfo, ...]
    candidates: np.ndarray
    candidate_columns: Tuple[ColumnInfo, ...]
    country_ids: np.ndarray

    def __post_init__(self):
        n = len(self.response)
        if self.forced.shape != (n, len(self.forced_columns)):
            raise ValueError("Forced block does not match its column list")
        if self.candidates.shape != (n, len(self.candidate_columns)):
            raise ValueError("Candidate block does not match its column list")
        if len(self.country_ids) != n:
            raise ValueError("country_ids must have one entry per row")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ValueError("Column names must be unique")

    @classmethod
    def from_arrays(
            cls,
            response: np.ndarray,
            forced: np.ndarray,
            names: Optional[Sequence[str]] = None,
            country_ids: Optional[np.ndarray] = None
    ) -> "DesignMatrix":
        """Plain regression design without candidates"""
        forced = np.asarray(forced, dtype=float)
        if forced.ndim == 1:
            forced = forced[:, None]
        names = names or [f"x{i}" for i in range(forced.shape[1])]
        n = forced.shape[0]
        return cls(
            response=np.asarray(response, dtype=float),
            forced=forced,
            forced_columns=tuple(ColumnInfo(name, ColumnRole.FORCED) for name in names),
            candidates=np.empty((n, 0)),
            candidate_columns=(),
            country_ids=np.zeros(n, dtype=int) if country_ids is None else np.asarray(country_ids),
        )

    @property
    def n_rows(self) -> int:
        return len(self.response)

    @property
    def columns(self) -> Tuple[ColumnInfo, ...]:
        return self.forced_columns + self.candidate_columns

    @property
    def column_names(self) -> Tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    @property
    def matrix(self) -> np.ndarray:
        return np.hstack([self.forced, self.candidates])

    def column_index(self) -> Dict[str, int]:
        return {name: i for i, name in enumerate(self.column_names)}
