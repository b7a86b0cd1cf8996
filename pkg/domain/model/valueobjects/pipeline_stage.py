from enum import Enum


class PipelineStage(Enum):
    LOAD = "load"
    DETECT = "detect"
    ESTIMATE = "estimate"
    ATTRIBUTE = "attribute"
    SUMMARIZE = "summarize"
    ROBUSTNESS = "robustness"
    REPORT = "report"

    @property
    def order(self) -> int:
        return list(PipelineStage).index(self)

    def reaches(self, other: "PipelineStage") -> bool:
        return self.order >= other.order
