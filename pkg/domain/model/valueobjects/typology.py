from enum import Enum


class Typology(Enum):
    DEVELOPED_DOMINANT = "developed-dominant"
    DEVELOPING_DOMINATED = "developing-dominated"
    EQUIVALENT = "equivalent"
