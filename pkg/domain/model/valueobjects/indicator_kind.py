from enum import Enum


class IndicatorKind(str, Enum):
    """Kind of saturating indicator. `BOTH` is only a search setting, never a column kind."""
    STEP = "step"
    IMPULSE = "impulse"
    BOTH = "both"
