import numpy as np
import pytest

from domain.model.aggregates.design_matrix import DesignMatrix
from domain.model.exceptions import DegreesOfFreedomError, InputError, ProvenanceError
from domain.services.least_squares import (
    ForcedProjection,
    cluster_se,
    fit_ols,
    fit_partialled,
    predict,
    response_scale,
)


def random_design(rng, n, k):
    x = rng.standard_normal((n, k))
    y = x @ rng.standard_normal(k) + 0.3 * rng.standard_normal(n)
    return DesignMatrix.from_arrays(y, x)


class TestFitOls:
    def test_matches_normal_equations(self):
        rng = np.random.default_rng(2024)
        for _ in range(100):
            n = int(rng.integers(12, 51))
            k = int(rng.integers(1, 11))
            design = random_design(rng, n, k)
            x, y = design.matrix, design.response
            oracle = np.linalg.solve(x.T @ x, x.T @ y)

            fit = fit_ols(design)
            np.testing.assert_allclose(fit.coefficients, oracle, rtol=1e-8, atol=1e-10)
            residuals = y - x @ oracle
            assert fit.rss == pytest.approx(residuals @ residuals, rel=1e-8)
            assert fit.dof == n - k

    def test_exact_line(self):
        x = np.array([1.0, 2.0, 3.0])
        fit = fit_ols(DesignMatrix.from_arrays(x, np.column_stack([np.ones(3), x])))

        np.testing.assert_allclose(fit.coefficients, [0.0, 1.0], atol=1e-12)
        assert fit.rss == pytest.approx(0.0, abs=1e-20)

    def test_dummy_regression_equals_within_estimator(self):
        rng = np.random.default_rng(7)
        groups = np.repeat(np.arange(5), 8)
        x = rng.standard_normal(40)
        y = 2.0 * x + groups * 1.5 + 0.1 * rng.standard_normal(40)
        dummies = (groups[:, None] == np.arange(5)[None, :]).astype(float)

        fit = fit_ols(DesignMatrix.from_arrays(y, np.column_stack([dummies, x])))

        x_within = x - np.array([x[groups == g].mean() for g in groups])
        y_within = y - np.array([y[groups == g].mean() for g in groups])
        within = (x_within @ y_within) / (x_within @ x_within)
        assert fit.coefficients[-1] == pytest.approx(within, rel=1e-8)

    def test_duplicated_column_is_dropped(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((30, 3))
        y = x @ np.array([1.0, -2.0, 0.5]) + 0.1 * rng.standard_normal(30)
        duplicated = np.column_stack([x, x[:, 1]])

        reference = fit_ols(DesignMatrix.from_arrays(y, x))
        fit = fit_ols(DesignMatrix.from_arrays(y, duplicated))

        assert len(fit.dropped) == 1
        assert fit.dof == reference.dof
        np.testing.assert_allclose(fit.fitted, reference.fitted, atol=1e-10)

    def test_row_permutation_invariance(self):
        rng = np.random.default_rng(5)
        design = random_design(rng, 40, 4)
        order = rng.permutation(40)

        fit = fit_ols(design)
        permuted = fit_ols(design.permute_rows(order))

        np.testing.assert_allclose(permuted.coefficients, fit.coefficients, rtol=1e-10)
        np.testing.assert_allclose(permuted.standard_errors, fit.standard_errors, rtol=1e-10)

    def test_exact_fit_keeps_positive_standard_errors(self):
        x = np.column_stack([np.ones(10), np.arange(10.0)])
        y = 3.0 + 0.5 * np.arange(10.0)

        fit = fit_ols(DesignMatrix.from_arrays(y, x))

        np.testing.assert_allclose(fit.coefficients, [3.0, 0.5], atol=1e-12)
        assert np.all(fit.standard_errors > 0)
        assert np.all(np.isfinite(fit.p_values))

    def test_zero_degrees_of_freedom(self):
        rng = np.random.default_rng(0)
        with pytest.raises(DegreesOfFreedomError, match="block_size"):
            fit_ols(DesignMatrix.from_arrays(rng.standard_normal(4), rng.standard_normal((4, 4))))

    def test_single_row_rejected(self):
        with pytest.raises(InputError):
            fit_ols(DesignMatrix.from_arrays(np.ones(1), np.ones((1, 1))))


class TestClusterSe:
    def test_singleton_clusters_equal_hc1(self):
        rng = np.random.default_rng(9)
        design = random_design(rng, 35, 3)
        fit = fit_ols(design)

        clustered = cluster_se(fit, np.arange(35))

        x, e = fit.model_matrix, fit.residuals
        bread = np.linalg.inv(x.T @ x)
        hc1 = 35 / (35 - 3) * bread @ (x.T * e ** 2) @ x @ bread
        np.testing.assert_allclose(clustered.cluster_standard_errors, np.sqrt(np.diag(hc1)), rtol=1e-8)
        np.testing.assert_array_equal(clustered.coefficients, fit.coefficients)

    def test_single_cluster_rejected(self):
        rng = np.random.default_rng(9)
        fit = fit_ols(random_design(rng, 20, 2))
        with pytest.raises(InputError):
            cluster_se(fit, np.zeros(20))


class TestPredict:
    def test_zeroed_column(self):
        rng = np.random.default_rng(4)
        design = random_design(rng, 25, 3)
        fit = fit_ols(design)

        full = predict(fit, design)
        without = predict(fit, design, zeroed_columns={"x2"})

        np.testing.assert_allclose(full, fit.fitted, atol=1e-10)
        np.testing.assert_allclose(full - without, design.matrix[:, 2] * fit.coefficients[2], atol=1e-10)

    def test_missing_column_is_a_provenance_error(self):
        rng = np.random.default_rng(4)
        design = random_design(rng, 25, 3)
        fit = fit_ols(design)
        narrower = DesignMatrix.from_arrays(design.response, design.matrix[:, :2])

        with pytest.raises(ProvenanceError):
            predict(fit, narrower)


class TestPartialledFit:
    def test_frisch_waugh_lovell(self):
        rng = np.random.default_rng(12)
        forced = np.column_stack([np.ones(50), rng.standard_normal((50, 3))])
        candidates = rng.standard_normal((50, 2))
        y = forced @ rng.standard_normal(4) + candidates @ np.array([0.8, 0.0]) + 0.2 * rng.standard_normal(50)

        full = fit_ols(DesignMatrix.from_arrays(y, np.column_stack([forced, candidates])))
        projection = ForcedProjection(forced)
        partial = fit_partialled(
            projection.residualize(y),
            projection.residualize(candidates),
            np.linalg.norm(candidates, axis=0),
            projection.rank,
            response_scale(y),
        )

        np.testing.assert_allclose(partial.coefficients, full.coefficients[-2:], rtol=1e-8)
        np.testing.assert_allclose(partial.p_values, full.p_values[-2:], rtol=1e-6)
        assert partial.rss == pytest.approx(full.rss, rel=1e-10)
        assert partial.information_criterion == pytest.approx(full.information_criterion, rel=1e-10)

    def test_candidate_spanned_by_forced_is_aliased(self):
        rng = np.random.default_rng(12)
        forced = np.column_stack([np.ones(30), rng.standard_normal(30)])
        candidates = np.column_stack([forced[:, 1] * 2.0, rng.standard_normal(30)])
        y = rng.standard_normal(30)
        projection = ForcedProjection(forced)

        partial = fit_partialled(
            projection.residualize(y),
            projection.residualize(candidates),
            np.linalg.norm(candidates, axis=0),
            projection.rank,
            response_scale(y),
        )

        assert partial.aliased == (0,)
        assert partial.p_values[0] == 1.0
        assert partial.coefficients[0] == 0.0
