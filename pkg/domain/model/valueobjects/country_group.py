from enum import Enum


class CountryGroup(Enum):
    DEVELOPED = "developed"
    DEVELOPING = "developing"
