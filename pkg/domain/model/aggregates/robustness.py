from dataclasses import dataclass
from typing import Dict, Optional, Tuple

from domain.model.aggregates.design_matrix import CandidateStep


@dataclass(frozen=True)
class GscmResult:
    country: str
    break_year: int
    factors: int
    pre_rmse: Optional[float]
    years: Tuple[int, ...]
    att: Tuple[float, ...]
    mean_att: Optional[float]
    att_se: Optional[float]
    donors: Tuple[str, ...]
    insufficient_pretreatment: bool = False
    insufficient_donors: bool = False
    cv_errors: Tuple[Tuple[int, float], ...] = ()
    unit_trends: bool = False

    def to_dict(self) -> dict:
        return {
            "country": self.country,
            "break_year": self.break_year,
            "factors": self.factors,
            "pre_rmse": self.pre_rmse,
            "years": list(self.years),
            "att": list(self.att),
            "mean_att": self.mean_att,
            "att_se": self.att_se,
            "donors": list(self.donors),
            "insufficient_pretreatment": self.insufficient_pretreatment,
            "insufficient_donors": self.insufficient_donors,
            "cv_errors": {str(r): e for r, e in self.cv_errors},
            "unit_trends": self.unit_trends,
        }


@dataclass(frozen=True)
class GammaSensitivityReport:
    gammas: Tuple[float, ...]
    retained: Dict[float, Tuple[CandidateStep, ...]]
    jaccard: float
    presence: Dict[CandidateStep, Tuple[bool, ...]]

    def to_dict(self, country_codes) -> dict:
        return {
            "gammas": list(self.gammas),
            "retained": {str(g): [c.label(country_codes) for c in self.retained[g]] for g in self.gammas},
            "jaccard": self.jaccard,
            "presence": {c.label(country_codes): list(flags) for c, flags in sorted(self.presence.items())},
        }


@dataclass(frozen=True)
class IisStabilityReport:
    persistent: Dict[CandidateStep, bool]
    retained_steps: Tuple[CandidateStep, ...]
    retained_impulses: Tuple[CandidateStep, ...]

    @property
    def persistence_rate(self) -> Optional[float]:
        if not self.persistent:
            return None
        return sum(self.persistent.values()) / len(self.persistent)

    def to_dict(self, country_codes) -> dict:
        return {
            "persistent": {c.label(country_codes): flag for c, flag in sorted(self.persistent.items())},
            "persistence_rate": self.persistence_rate,
            "retained_steps": [c.label(country_codes) for c in self.retained_steps],
            "retained_impulses": [c.label(country_codes) for c in self.retained_impulses],
        }
