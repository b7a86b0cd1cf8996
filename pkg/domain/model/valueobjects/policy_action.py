from enum import Enum


class PolicyAction(Enum):
    ADOPTION = "adoption"
    TIGHTENING = "tightening"
