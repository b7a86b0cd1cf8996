from typing import List, Optional, Sequence, Tuple
import logging

import numpy as np

from application.saturation_service import SaturationService
from domain.model.aggregates.design_matrix import CandidateStep
from domain.model.aggregates.panel_dataset import PanelDataset
from domain.model.aggregates.robustness import GammaSensitivityReport, GscmResult, IisStabilityReport
from domain.model.aggregates.selection import SelectionConfig, SelectionResult
from domain.model.exceptions import ConvergenceError, NumericalError
from domain.model.valueobjects.indicator_kind import IndicatorKind
from domain.services.design_builder import covariate_panels

logger = logging.getLogger(__name__)

MIN_PRETREATMENT = 5
MIN_DONORS = 2
MAX_SWEEPS = 500
ALS_TOLERANCE = 1e-9


def _solve(design: np.ndarray, values: np.ndarray) -> np.ndarray:
    return np.linalg.lstsq(design, values, rcond=None)[0]


def _partial_beta(design: np.ndarray, response: np.ndarray, regressors: np.ndarray) -> np.ndarray:
    """Pooled slope of `response` (m x K) on `regressors` (m x K x p) with `design` (m x q) partialled out of every column"""
    m, k, p = regressors.shape
    response_r = response - design @ _solve(design, response)
    flat = regressors.reshape(m, k * p)
    regressors_r = flat - design @ _solve(design, flat)
    return _solve(regressors_r.reshape(m * k, p), response_r.ravel())


class InteractiveFixedEffects:
    """y_it = x_it'beta + alpha_i + delta_i t + xi_g(i),t + lambda_i'F_t + e_it by alternating least squares.

    A sweep solves (beta, unit terms) given the time terms, then (beta, time terms) given the unit
    terms; both are exact least-squares steps so the objective never increases.
    """

    def __init__(
            self,
            factors: int,
            unit_trends: bool = False,
            max_sweeps: int = MAX_SWEEPS,
            tolerance: float = ALS_TOLERANCE
    ):
        self.factors = factors
        self.unit_trends = unit_trends
        self.max_sweeps = max_sweeps
        self.tolerance = tolerance
        self.objective_path: List[float] = []

    def _unit_design(self, factors: np.ndarray) -> np.ndarray:
        columns = [np.ones(len(self.time_index))]
        if self.unit_trends:
            columns.append(self.time_index)
        return np.column_stack(columns + [factors])

    def fit(
            self,
            y: np.ndarray,
            covariates: Optional[np.ndarray] = None,
            groups: Optional[Sequence] = None
    ) -> "InteractiveFixedEffects":
        """`y` is N x T, `covariates` N x T x p, `groups` one label per unit (default: a single group)"""
        n, t = y.shape
        r = self.factors
        x = np.zeros((n, t, 0)) if covariates is None else np.asarray(covariates, dtype=float)
        labels, group_rows = np.unique(np.zeros(n) if groups is None else np.asarray(groups), return_inverse=True)
        membership = (group_rows[:, None] == np.arange(len(labels))[None, :]).astype(float)
        self.time_index = np.arange(t, dtype=float) - (t - 1) / 2.0
        self.group_labels = tuple(labels.tolist()) if groups is not None else ()

        beta = np.zeros(x.shape[2])
        xi = membership.T @ y / membership.sum(axis=0)[:, None]
        alpha = (y - xi[group_rows]).mean(axis=1)
        delta = np.zeros(n)
        if r:
            u, s, vt = np.linalg.svd(y - alpha[:, None] - xi[group_rows], full_matrices=False)
            loadings = u[:, :r]
            factors = vt[:r].T * s[:r]
        else:
            loadings = np.zeros((n, 0))
            factors = np.zeros((t, 0))

        def objective() -> float:
            fitted = (x @ beta + alpha[:, None] + delta[:, None] * self.time_index[None, :]
                      + xi[group_rows] + loadings @ factors.T)
            return float(np.sum((y - fitted) ** 2))

        previous = objective()
        self.objective_path = [previous]
        for sweep in range(1, self.max_sweeps + 1):
            unit_design = self._unit_design(factors)
            response = y - xi[group_rows]
            if beta.size:
                beta = _partial_beta(unit_design, response.T, x.transpose(1, 0, 2))
            unit_coef = _solve(unit_design, (response - x @ beta).T)
            alpha = unit_coef[0]
            delta = unit_coef[1] if self.unit_trends else np.zeros(n)
            loadings = unit_coef[1 + int(self.unit_trends):].T

            time_design = np.column_stack([membership, loadings])
            response = y - alpha[:, None] - delta[:, None] * self.time_index[None, :]
            if beta.size:
                beta = _partial_beta(time_design, response, x)
            time_coef = _solve(time_design, response - x @ beta)
            xi, factors = time_coef[:len(labels)], time_coef[len(labels):].T

            current = objective()
            self.objective_path.append(current)
            if current > previous * (1.0 + 1e-9) + 1e-12:
                raise NumericalError(f"ALS objective increased at sweep {sweep}: {previous:.6g} -> {current:.6g}")
            if previous - current <= self.tolerance * max(previous, 1e-12):
                break
            previous = current
        else:
            raise ConvergenceError(
                "Interactive fixed effects ALS did not converge",
                {"sweeps": self.max_sweeps, "factors": r, "objective": f"{current:.6g}",
                 "last_change": f"{previous - current:.3g}"},
            )

        self.beta, self.alpha, self.delta, self.xi = beta, alpha, delta, xi
        self.loadings, self.factor_path = loadings, factors
        return self

    def project(
            self,
            y_unit: np.ndarray,
            periods: np.ndarray,
            covariates_unit: Optional[np.ndarray] = None,
            group=None
    ) -> np.ndarray:
        """Fit a new unit's intercept, trend and loadings on `periods`; its counterfactual path over all periods"""
        row = self.group_labels.index(group) if group is not None else 0
        base = self.xi[row].copy()
        if covariates_unit is not None and self.beta.size:
            base = base + covariates_unit @ self.beta
        design = self._unit_design(self.factor_path)
        coef = _solve(design[periods], (y_unit - base)[periods])
        return base + design @ coef


class RobustnessService:
    """Gamma sensitivity, impulse-saturation stability and a synthetic-control cross-check"""

    def __init__(self, saturation_service: Optional[SaturationService] = None):
        self._saturation = saturation_service or SaturationService()

    def gamma_sensitivity(
            self,
            dataset: PanelDataset,
            config: SelectionConfig,
            gammas: Sequence[float] = (0.001, 0.01)
    ) -> GammaSensitivityReport:
        gammas = tuple(gammas)
        retained = {g: self._saturation.sis_search(dataset, config.with_(gamma=g)).retained for g in gammas}
        union = sorted(set().union(*retained.values()))
        presence = {c: tuple(c in retained[g] for g in gammas) for c in union}

        first, last = set(retained[gammas[0]]), set(retained[gammas[-1]])
        jaccard = len(first & last) / len(first | last) if first | last else 1.0
        logger.info(f"[{dataset.series_key.label}] gamma sensitivity {gammas}: Jaccard {jaccard:.3f}")
        return GammaSensitivityReport(gammas=gammas, retained=retained, jaccard=jaccard, presence=presence)

    def iis_stability(
            self,
            dataset: PanelDataset,
            config: SelectionConfig,
            sis_result: SelectionResult
    ) -> IisStabilityReport:
        """Do step retentions persist (same country, within one year) when impulses compete?"""
        both = self._saturation.search(dataset, config.with_(indicator_kind=IndicatorKind.BOTH))
        steps = both.retained_steps
        persistent = {
            original: any(
                s.country_index == original.country_index and abs(s.year - original.year) <= 1
                for s in steps
            )
            for original in sis_result.retained_steps
        }
        return IisStabilityReport(
            persistent=persistent,
            retained_steps=steps,
            retained_impulses=both.retained_impulses,
        )

    def gscm_validate(
            self,
            dataset: PanelDataset,
            country_index: int,
            break_year: int,
            donors: Optional[Sequence[int]] = None,
            r_max: int = 3,
            factors: Optional[int] = None,
            unit_trends: bool = True,
            min_pretreatment: int = MIN_PRETREATMENT,
            min_donors: int = MIN_DONORS
    ) -> GscmResult:
        """Generalized synthetic control on log emissions.

        The donor model carries the control regressors, group-year effects, unit trends and
        interactive factors; the treated unit is projected from its pre-break years with the
        donor slopes, its group's year effects and its own intercept, trend and loadings.
        """
        codes = dataset.country_codes
        if donors is None:
            donors = [j for j in range(dataset.n_countries) if j != country_index]
        donors = sorted(set(donors) - {country_index})
        k = dataset.period_index(break_year)
        base = dict(country=codes[country_index], break_year=break_year, donors=tuple(codes[j] for j in donors))

        if k < min_pretreatment:
            logger.info(f"GSCM skipped for {codes[country_index]}.{break_year}: {k} pre-treatment periods")
            return self._empty(base, insufficient_pretreatment=True)
        if len(donors) < min_donors:
            logger.info(f"GSCM skipped for {codes[country_index]}.{break_year}: {len(donors)} donors")
            return self._empty(base, insufficient_donors=True)
        if unit_trends and k < 3:
            logger.info(f"GSCM for {codes[country_index]}.{break_year}: {k} pre-treatment periods, no unit trends")
            unit_trends = False

        log_y = np.log(dataset.emissions)
        covariates = np.stack([block for _, block in covariate_panels(dataset)], axis=2)
        labels = np.array([c.group.value for c in dataset.countries])
        donor_groups, treated_group = labels[donors], labels[country_index]
        if treated_group not in set(donor_groups):
            logger.info(f"No {treated_group} donors for {codes[country_index]}; pooled year effects")
            donor_groups, treated_group = None, None

        donor_y, donor_x = log_y[donors], covariates[donors]
        treated, treated_x = log_y[country_index], covariates[country_index]
        pre = np.arange(k)

        def fit(r: int) -> InteractiveFixedEffects:
            return InteractiveFixedEffects(r, unit_trends=unit_trends).fit(donor_y, donor_x, donor_groups)

        cv_errors: List[Tuple[int, float]] = []
        if factors is None:
            models = {}
            for r in range(0, r_max + 1):
                if 1 + int(unit_trends) + r > k - 1 or r > len(donors) - 1:
                    break
                try:
                    models[r] = fit(r)
                except ConvergenceError as e:
                    logger.warning(f"GSCM factor count {r} skipped: {e}")
                    continue
                cv_errors.append((r, self._loo_error(models[r], treated, treated_x, treated_group, pre)))
            if cv_errors:
                factors = min(cv_errors, key=lambda item: (item[1], item[0]))[0]
                model = models[factors]
            else:
                factors = 0
                model = fit(0)
        else:
            model = fit(factors)

        synthetic = model.project(treated, pre, treated_x, treated_group)
        gap = treated - synthetic
        pre_rmse = float(np.sqrt(np.mean(gap[:k] ** 2)))
        att = gap[k:]
        return GscmResult(
            factors=factors,
            pre_rmse=pre_rmse,
            years=dataset.years[k:],
            att=tuple(float(a) for a in att),
            mean_att=float(att.mean()),
            att_se=pre_rmse / np.sqrt(len(att)),
            cv_errors=tuple(cv_errors),
            unit_trends=unit_trends,
            **base,
        )

    @staticmethod
    def _loo_error(
            model: InteractiveFixedEffects,
            treated: np.ndarray,
            treated_x: np.ndarray,
            group,
            pre: np.ndarray
    ) -> float:
        errors = []
        for left_out in pre:
            rest = pre[pre != left_out]
            prediction = model.project(treated, rest, treated_x, group)
            errors.append((treated[left_out] - prediction[left_out]) ** 2)
        return float(np.mean(errors))

    @staticmethod
    def _empty(base: dict, **flags) -> GscmResult:
        return GscmResult(
            factors=0, pre_rmse=None, years=(), att=(), mean_att=None, att_se=None, **base, **flags
        )
