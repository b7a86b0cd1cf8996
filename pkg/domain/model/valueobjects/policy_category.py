from enum import Enum


class PolicyCategory(Enum):
    INFORMATION = "information"
    PRICING = "pricing"
    REGULATION = "regulation"
    SUBSIDY = "subsidy"
