from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

from domain.model.aggregates.design_matrix import CandidateStep
from domain.model.aggregates.fit_result import FitResult
from domain.model.valueobjects.indicator_kind import IndicatorKind


@dataclass(frozen=True)
class SelectionConfig:
    gamma: float = 0.01
    block_size: int = 20
    seed: int = 0
    max_outer_iterations: int = 10
    max_paths: int = 8
    indicator_kind: IndicatorKind = IndicatorKind.STEP
    n_jobs: int = 1

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.block_size < 2:
            raise ValueError("block_size must be at least 2")
        if self.max_paths < 1:
            raise ValueError("max_paths must be at least 1")
        if self.max_outer_iterations < 1:
            raise ValueError("max_outer_iterations must be at least 1")
        if self.n_jobs < 1:
            raise ValueError("n_jobs must be at least 1")
        object.__setattr__(self, "indicator_kind", IndicatorKind(self.indicator_kind))

    def with_(self, **changes) -> "SelectionConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class TraceRecord:
    """One selection fit: the candidates entering it, the survivors and the opening p-values"""
    stage: str
    iteration: int
    block_id: Optional[int]
    candidates: Tuple[CandidateStep, ...]
    survivors: Tuple[CandidateStep, ...]
    p_values: Tuple[float, ...]

    def to_dict(self, country_codes: Sequence[str]) -> dict:
        return {
            "stage": self.stage,
            "iteration": self.iteration,
            "block_id": self.block_id,
            "candidates": [c.label(country_codes) for c in self.candidates],
            "survivors": [c.label(country_codes) for c in self.survivors],
            "p_values": [round(p, 12) for p in self.p_values],
        }


@dataclass(frozen=True, eq=False)
class SelectionResult:
    retained: Tuple[CandidateStep, ...]
    config: SelectionConfig
    converged: bool
    iterations: int
    trace: Tuple[TraceRecord, ...] = ()
    union_history: Tuple[Tuple[CandidateStep, ...], ...] = ()
    final_fit: Optional[FitResult] = None
    n_candidates: int = 0

    @property
    def retained_steps(self) -> Tuple[CandidateStep, ...]:
        return tuple(c for c in self.retained if c.kind == IndicatorKind.STEP)

    @property
    def retained_impulses(self) -> Tuple[CandidateStep, ...]:
        return tuple(c for c in self.retained if c.kind == IndicatorKind.IMPULSE)

    def break_times(self) -> Dict[int, List[int]]:
        """Per country index, its retained step years (the break times of each treated country)"""
        times: Dict[int, List[int]] = {}
        for c in self.retained_steps:
            times.setdefault(c.country_index, []).append(c.year)
        return times


@dataclass(frozen=True)
class GetsOutcome:
    survivors: Tuple[CandidateStep, ...]
    record: Optional[TraceRecord] = None
    terminals: int = 0
    fits: int = 0
