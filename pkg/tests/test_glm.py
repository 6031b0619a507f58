import math

import mpmath
import numpy as np
import pytest
from scipy.stats import norm

from blupcal import (
    DataError,
    RankDeficientError,
    Z_95,
    fit_linear_ols,
    fit_logistic_irls,
    normal_quantile,
    wald_interval,
)


def mpmath_normal_solve(design, y):
    """Independent high-precision solve of the normal equations."""
    with mpmath.workdps(50):
        D = mpmath.matrix(design.tolist())
        yv = mpmath.matrix([[v] for v in y])
        A = D.T * D
        b = D.T * yv
        beta = mpmath.lu_solve(A, b)
        return np.array([float(beta[i]) for i in range(design.shape[1])])


def logistic_deviance(design, y, beta):
    eta = design @ beta
    p = 1.0 / (1.0 + np.exp(-eta))
    p = np.clip(p, 1e-12, 1 - 1e-12)
    return -2.0 * np.sum(y * np.log(p) + (1 - y) * np.log(1 - p))


def grid_refined_mle(design, y, box=5.0, width=41, zooms=14):
    """Brute-force 2-D deviance minimizer by iterative grid refinement."""
    center = np.zeros(2)
    half = box
    best = None
    for _ in range(zooms):
        g0 = np.linspace(center[0] - half, center[0] + half, width)
        g1 = np.linspace(center[1] - half, center[1] + half, width)
        best = (np.inf, center)
        for b0 in g0:
            for b1 in g1:
                d = logistic_deviance(design, y, np.array([b0, b1]))
                if d < best[0]:
                    best = (d, np.array([b0, b1]))
        center = best[1]
        half *= 0.2
    return best


class TestLinearOls:
    def test_exact_line(self):
        design = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]])
        fit = fit_linear_ols(design, np.array([1.0, 3.0, 5.0]))
        assert fit.coefficients == pytest.approx([1.0, 2.0], abs=1e-12)
        assert fit.dispersion == pytest.approx(0.0, abs=1e-24)

    def test_intercept_only_constant(self):
        fit = fit_linear_ols(np.ones((4, 1)), np.full(4, 3.5))
        assert fit.coefficients[0] == pytest.approx(3.5)
        assert fit.covariance[0, 0] == pytest.approx(0.0, abs=1e-24)

    def test_matches_high_precision_oracle(self):
        rng = np.random.default_rng(30)
        design = np.column_stack([np.ones(20), rng.standard_normal((20, 2))])
        y = rng.standard_normal(20)
        fit = fit_linear_ols(design, y)
        oracle = mpmath_normal_solve(design, y)
        assert fit.coefficients == pytest.approx(oracle, rel=1e-10, abs=1e-13)

    def test_rank_deficiency_names_column(self):
        x = np.arange(5.0)
        design = np.column_stack([np.ones(5), x, 2.0 * x])
        with pytest.raises(RankDeficientError, match="column") as exc_info:
            fit_linear_ols(design, np.arange(5.0))
        assert exc_info.value.column in (1, 2)

    def test_needs_more_rows_than_columns(self):
        with pytest.raises(ValueError, match="more observations"):
            fit_linear_ols(np.ones((2, 2)), np.ones(2))

    def test_residuals_orthogonal_to_design(self):
        rng = np.random.default_rng(31)
        for _ in range(20):
            n = int(rng.integers(8, 60))
            q = int(rng.integers(1, 5))
            design = np.column_stack([np.ones(n), rng.standard_normal((n, q - 1))]) if q > 1 else np.ones((n, 1))
            y = rng.standard_normal(n) * 3
            fit = fit_linear_ols(design, y)
            r = y - design @ fit.coefficients
            scale = max(1.0, float(np.abs(y).max()))
            assert np.max(np.abs(design.T @ r)) < 1e-8 * scale * n

    def test_covariance_symmetric_psd(self):
        rng = np.random.default_rng(32)
        design = np.column_stack([np.ones(30), rng.standard_normal((30, 3))])
        fit = fit_linear_ols(design, rng.standard_normal(30))
        cov = fit.covariance
        assert np.max(np.abs(cov - cov.T)) < 1e-12
        assert np.linalg.eigvalsh(cov).min() > -1e-10


class TestLogisticIrls:
    def test_intercept_only_balanced(self):
        fit = fit_logistic_irls(np.ones((4, 1)), np.array([0.0, 1.0, 0.0, 1.0]))
        assert fit.converged
        assert fit.coefficients[0] == pytest.approx(0.0, abs=1e-10)

    def test_intercept_only_three_quarters(self):
        fit = fit_logistic_irls(np.ones((8, 1)), np.array([1, 1, 1, 0, 1, 1, 1, 0], dtype=float))
        assert fit.coefficients[0] == pytest.approx(math.log(3.0), abs=1e-8)

    def test_matches_grid_refined_mle(self):
        design = np.column_stack([np.ones(6), [-2.0, -1.0, 0.0, 1.0, 2.0, 3.0]])
        y = np.array([0.0, 0.0, 1.0, 0.0, 1.0, 1.0])
        fit = fit_logistic_irls(design, y)
        assert fit.converged
        dev_grid, beta_grid = grid_refined_mle(design, y)
        dev_fit = logistic_deviance(design, y, fit.coefficients)
        assert dev_fit <= dev_grid + 1e-8
        assert abs(dev_fit - dev_grid) < 1e-8
        assert fit.coefficients == pytest.approx(beta_grid, abs=1e-5)

    def test_perfect_separation_flagged(self):
        design = np.column_stack([np.ones(6), [-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]])
        y = np.array([0.0, 0.0, 0.0, 1.0, 1.0, 1.0])
        fit = fit_logistic_irls(design, y)
        assert not fit.converged

    def test_single_class_rejected(self):
        with pytest.raises(DataError, match="single class"):
            fit_logistic_irls(np.column_stack([np.ones(4), np.arange(4.0)]), np.ones(4))

    def test_non_binary_rejected(self):
        with pytest.raises(DataError, match="0/1"):
            fit_logistic_irls(np.ones((4, 1)), np.array([0.0, 1.0, 2.0, 1.0]))

    def test_score_vanishes_at_optimum(self):
        rng = np.random.default_rng(33)
        n = 300
        design = np.column_stack([np.ones(n), rng.standard_normal((n, 2))])
        eta = design @ np.array([0.3, 0.8, -0.5])
        y = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
        fit = fit_logistic_irls(design, y)
        assert fit.converged
        p = 1.0 / (1.0 + np.exp(-(design @ fit.coefficients)))
        assert np.max(np.abs(design.T @ (y - p))) < 1e-6

    def test_covariance_is_inverse_fisher_information(self):
        rng = np.random.default_rng(34)
        n = 200
        design = np.column_stack([np.ones(n), rng.standard_normal(n)])
        y = (rng.random(n) < 0.5).astype(float)
        fit = fit_logistic_irls(design, y)
        p = 1.0 / (1.0 + np.exp(-(design @ fit.coefficients)))
        info = design.T @ (design * (p * (1 - p))[:, None])
        assert fit.covariance == pytest.approx(np.linalg.inv(info), rel=1e-8)
        assert np.max(np.abs(fit.covariance - fit.covariance.T)) < 1e-12

    def test_location_shift_changes_only_intercept(self):
        rng = np.random.default_rng(35)
        n = 400
        x = rng.standard_normal(n)
        x -= x.mean()
        y = (rng.random(n) < 1.0 / (1.0 + np.exp(-(0.2 + 0.9 * x)))).astype(float)
        fit0 = fit_logistic_irls(np.column_stack([np.ones(n), x]), y)
        fit1 = fit_logistic_irls(np.column_stack([np.ones(n), x + 5.0]), y)
        assert fit1.coefficients[1] == pytest.approx(fit0.coefficients[1], abs=1e-8)
        assert fit1.coefficients[0] == pytest.approx(fit0.coefficients[0] - 5.0 * fit0.coefficients[1], abs=1e-6)


class TestWaldInterval:
    def test_unit_se_at_95(self):
        fit = fit_linear_ols(np.ones((3, 1)), np.zeros(3))
        fake = fit.__class__(
            coefficients=np.array([0.0]),
            covariance=np.array([[1.0]]),
            family="linear",
            converged=True,
            n_iterations=0,
            dispersion=1.0,
        )
        lower, upper = wald_interval(fake, 0.95)
        assert lower[0] == pytest.approx(-1.959964, abs=1e-12)
        assert upper[0] == pytest.approx(1.959964, abs=1e-12)

    def test_table_style_interval(self):
        fake = fit_linear_ols(np.ones((3, 1)), np.zeros(3)).__class__(
            coefficients=np.array([2.95]),
            covariance=np.array([[0.036**2]]),
            family="linear",
            converged=True,
            n_iterations=0,
            dispersion=1.0,
        )
        lower, upper = wald_interval(fake, 0.95)
        assert lower[0] == pytest.approx(2.8794, abs=5e-5)
        assert upper[0] == pytest.approx(3.0206, abs=5e-5)

    def test_half_level_uses_quantile(self):
        fake = fit_linear_ols(np.ones((3, 1)), np.zeros(3)).__class__(
            coefficients=np.array([0.0]),
            covariance=np.array([[4.0]]),
            family="linear",
            converged=True,
            n_iterations=0,
            dispersion=1.0,
        )
        lower, upper = wald_interval(fake, 0.5)
        assert upper[0] == pytest.approx(0.674490 * 2.0, abs=1e-5)
        assert lower[0] == pytest.approx(-0.674490 * 2.0, abs=1e-5)

    def test_nonconverged_rejected(self):
        fake = fit_linear_ols(np.ones((3, 1)), np.zeros(3)).__class__(
            coefficients=np.array([0.0]),
            covariance=np.array([[1.0]]),
            family="logistic",
            converged=False,
            n_iterations=50,
            dispersion=1.0,
        )
        with pytest.raises(ValueError, match="non-converged"):
            wald_interval(fake, 0.95)

    def test_bad_level_rejected(self):
        fit = fit_linear_ols(np.ones((3, 1)), np.array([1.0, 2.0, 3.0]))
        with pytest.raises(ValueError):
            wald_interval(fit, 1.0)


class TestNormalQuantile:
    def test_z95_constant_matches_spec(self):
        assert Z_95 == 1.959964

    def test_against_scipy_grid(self):
        ps = np.concatenate([
            np.linspace(1e-6, 1 - 1e-6, 101),
            [1e-9, 1e-12, 1 - 1e-9, 0.5, 0.75, 0.975, 0.995],
        ])
        for p in ps:
            assert abs(normal_quantile(float(p)) - norm.ppf(p)) < 1e-9

    def test_symmetry(self):
        for p in (0.6, 0.9, 0.99, 0.999999):
            assert normal_quantile(p) == pytest.approx(-normal_quantile(1 - p), rel=1e-12)

    def test_domain(self):
        for p in (0.0, 1.0, -0.1, 1.1):
            with pytest.raises(ValueError):
                normal_quantile(p)
