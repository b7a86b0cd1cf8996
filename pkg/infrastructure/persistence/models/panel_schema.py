"""Column layout of the flat-file inputs and outputs"""

EMISSIONS_COLUMNS = ("country_iso3", "year", "sector", "pollutant", "emissions_t")
COVARIATES_COLUMNS = ("country_iso3", "year", "gdp_usd2015", "population", "hdd16", "cdd18")
GROUPS_COLUMNS = ("country_iso3", "group", "eu_member")
EU_CONTROLS_COLUMNS = ("control_name", "country_iso3", "year", "value")
POLICIES_COLUMNS = ("country_iso3", "year", "sector", "instrument", "action", "eu_wide")
CATEGORIES_COLUMNS = ("instrument", "category")
TRUTH_COLUMNS = ("country_iso3", "break_year", "tau")

# covariates.csv column -> PanelDataset attribute
COVARIATE_FIELDS = {
    "gdp_usd2015": "gdp",
    "population": "population",
    "hdd16": "hdd",
    "cdd18": "cdd",
}

BREAKS_COLUMNS = (
    "series_key", "country", "break_year", "tau_hat", "se", "effect_pct",
    "ci99_lo", "ci99_hi", "window_lo", "window_hi",
    "cum_reduction_t", "cum_lo_t", "cum_hi_t",
    "se_cluster", "p_value", "significant",
)
ATTRIBUTION_COLUMNS = (
    "series_key", "country", "group", "break_year", "ci99_lo", "ci99_hi", "effect_pct",
    "n_events", "instruments", "categories", "mix_label", "includes_pricing",
)
SUMMARY_COLUMNS = ("instrument", "frequency", "mean_effect", "typology", "case1", "case2", "case3")
MIX_COLUMNS = (
    "instrument", "mean_alone_pct", "mean_in_mix_pct", "mean_in_mix_with_pricing_pct",
    "n_alone", "n_in_mix", "n_in_mix_with_pricing",
)
COMBO_COLUMNS = ("sector", "group", "combination", "count", "share")
TOTALS_COLUMNS = ("pollutant", "n_breaks", "reduction_t", "low_t", "high_t", "reduction_gt", "low_gt", "high_gt")
BREAK_SUMMARY_COLUMNS = ("pollutant", "sector", "group", "n_breaks", "mean_effect_pct", "cum_reduction_t")
RECOVERY_COLUMNS = (
    "tau", "sigma", "post_break_length", "replications",
    "exact_rate", "within_one_rate", "missed_rate", "bias", "rmse",
)

TRUE_VALUES = {"1", "true", "yes", "y", "t"}
FALSE_VALUES = {"0", "false", "no", "n", "f", ""}
