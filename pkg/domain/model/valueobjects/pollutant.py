from enum import Enum


class Pollutant(Enum):
    NOX = "NOx"
    CO = "CO"
    VOCS = "VOCs"
