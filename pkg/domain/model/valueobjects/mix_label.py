from enum import Enum


class MixLabel(Enum):
    UNMATCHED = "unmatched"
    SINGLE_TYPE = "single-type"
    MIXED_TYPE = "mixed-type"
