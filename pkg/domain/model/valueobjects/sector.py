from enum import Enum


class Sector(Enum):
    BUILDINGS = "buildings"
    ELECTRICITY = "electricity"
    INDUSTRY = "industry"
    TRANSPORT = "transport"
