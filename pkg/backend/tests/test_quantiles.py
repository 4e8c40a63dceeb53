"""
Tests for quantile regression and the marginal CDFs
"""
import pytest
import numpy as np
from statsmodels.regression.quantile_regression import QuantReg

from exceptions import DegenerateRegressor
from quantiles.marginal_quantiles import (PERCENTILES, MarginalCdf, QuantileFan, QuantileForecaster, build_cdf,
                                          fit_quantile, fit_quantiles, pinball_loss)


@pytest.fixture
def regression_sample(rng):
    """Heteroscedastic prices against point forecasts"""
    x = rng.uniform(20.0, 80.0, 200)
    y = 5.0 + 0.9 * x + rng.normal(0.0, 1.0, 200) * (0.05 * x)
    return x, y


class TestQuantileRegression:
    """Test the check-loss minimizer"""

    @pytest.mark.parametrize("p", [0.1, 0.5, 0.9])
    def test_matches_reference_solver(self, regression_sample, p):
        """Check loss is no worse than an independent quantile regression"""
        x, y = regression_sample
        slope, intercept = fit_quantile(x, y, p)
        reference = QuantReg(y, np.column_stack([np.ones_like(x), x])).fit(q=p).params
        ours = pinball_loss(y - intercept - slope * x, p)
        theirs = pinball_loss(y - reference[0] - reference[1] * x, p)
        assert ours <= theirs * (1 + 1e-3) + 1e-9
        assert slope == pytest.approx(reference[1], abs=0.05)

    def test_intercept_only(self, rng):
        """Without a regressor the fit is an empirical quantile"""
        y = rng.normal(size=101)
        intercept, slope = fit_quantiles(None, y, np.array([0.5]))
        assert slope[0] == 0.0
        assert pinball_loss(y - intercept[0], 0.5) <= pinball_loss(y - np.median(y), 0.5) + 1e-9

    @pytest.mark.parametrize("p, expected", [(0.5, 3.0), (0.9, 5.0)])
    def test_intercept_only_examples(self, p, expected):
        """Median and 90th percentile of 1..5 are 3 and 5"""
        intercept, _ = fit_quantiles(None, np.arange(1.0, 6.0), np.array([p]))
        assert intercept[0] == pytest.approx(expected, abs=1e-6)

    def test_several_levels_at_once(self):
        """Intercept-only fits of several levels share one call"""
        intercepts, slopes = fit_quantiles(None, np.arange(1.0, 6.0), np.array([0.5, 0.9]))
        np.testing.assert_allclose(intercepts, [3.0, 5.0], atol=1e-6)
        np.testing.assert_array_equal(slopes, [0.0, 0.0])

    def test_calibrated_forecasts(self, rng):
        """When forecasts equal the outcomes every level has slope 1 and intercept 0"""
        x = rng.uniform(20.0, 80.0, 60)
        intercepts, slopes = fit_quantiles(x, x, PERCENTILES)
        assert intercepts.shape == slopes.shape == (99,)
        np.testing.assert_allclose(slopes, 1.0, atol=1e-6)
        np.testing.assert_allclose(intercepts, 0.0, atol=1e-6)

    def test_all_levels_match_single_fits(self, regression_sample):
        """The 99-level fit reaches the same check loss as one level at a time"""
        x, y = regression_sample
        intercepts, slopes = fit_quantiles(x, y, PERCENTILES)
        for k in (0, 24, 49, 89, 98):
            slope, intercept = fit_quantile(x, y, PERCENTILES[k])
            batched = pinball_loss(y - intercepts[k] - slopes[k] * x, PERCENTILES[k])
            single = pinball_loss(y - intercept - slope * x, PERCENTILES[k])
            assert batched == pytest.approx(single, rel=1e-4)

    def test_training_coverage(self, regression_sample):
        """Share of outcomes below each fitted quantile is within 2/sqrt(n) of its level"""
        x, y = regression_sample
        intercepts, slopes = fit_quantiles(x, y, PERCENTILES)
        coverage = np.mean(y[None, :] <= intercepts[:, None] + slopes[:, None] * x[None, :] + 1e-9, axis=1)
        assert np.all(np.abs(coverage - PERCENTILES) <= 2 / np.sqrt(y.size))

    def test_batched_fit(self, regression_sample):
        """Leading axes fit independent regressions"""
        x, y = regression_sample
        intercepts, slopes = fit_quantiles(np.stack([x, x]), np.stack([y, 2 * y]), np.array([0.25, 0.75]))
        assert intercepts.shape == (2, 2)
        np.testing.assert_allclose(slopes[1], 2 * slopes[0], rtol=1e-3)

    def test_too_few_observations(self, rng):
        """Fewer than 30 observations are rejected"""
        with pytest.raises(ValueError):
            fit_quantile(rng.normal(size=29), rng.normal(size=29), 0.5)

    def test_constant_regressor(self, rng):
        """A constant point forecast cannot carry a slope"""
        with pytest.raises(DegenerateRegressor):
            fit_quantile(np.ones(40), rng.normal(size=40), 0.5)

    def test_probability_range(self, regression_sample):
        """Probabilities must lie strictly inside (0, 1)"""
        x, y = regression_sample
        with pytest.raises(ValueError):
            fit_quantile(x, y, 1.0)


class TestMarginalCdf:
    """Test fans and the CDFs built from them"""

    def test_crossing_quantiles_are_sorted(self):
        """Crossed percentile predictions are rearranged"""
        values = np.linspace(0.0, 98.0, 99)
        values[[10, 11]] = values[[11, 10]]
        fan = QuantileFan(values, subperiod=3)
        assert np.all(np.diff(fan.values) >= 0)

    def test_cdf_hits_the_knots(self):
        """The CDF passes through every percentile knot"""
        fan = QuantileFan(np.linspace(10.0, 108.0, 99))
        cdf = MarginalCdf(fan)
        assert cdf(fan.values[49]) == pytest.approx(0.5)
        assert cdf(fan.values[0]) == pytest.approx(0.01)
        assert cdf(-1e9) == 0.0
        assert cdf(1e9) == 1.0

    def test_inverse(self):
        """inverse undoes the CDF inside the support"""
        cdf = MarginalCdf(QuantileFan(np.cumsum(np.full(99, 0.5))))
        x = np.array([1.0, 10.0, 30.0, 49.0])
        np.testing.assert_allclose(cdf.inverse(cdf(x)), x, atol=1e-9)
        u = np.array([0.001, 0.5, 0.999])
        np.testing.assert_allclose(cdf(cdf.inverse(u)), u, atol=1e-9)

    def test_tied_fan_stays_invertible(self):
        """A flat fan still gives a strictly increasing knot sequence"""
        cdf = MarginalCdf(QuantileFan(np.full(99, 42.0)))
        assert np.all(np.diff(cdf.knots) > 0)
        assert np.all(np.isfinite(cdf.inverse(np.array([0.2, 0.8]))))

    def test_fan_shape_is_checked(self):
        """Fans need 99 finite values"""
        with pytest.raises(ValueError):
            QuantileFan(np.arange(10.0))

    def test_build_cdf_checks_subperiod(self):
        """A fan is bound to its subperiod"""
        fan = QuantileFan(np.linspace(0.0, 1.0, 99), subperiod=2)
        assert isinstance(build_cdf(fan, 2), MarginalCdf)
        with pytest.raises(ValueError):
            build_cdf(fan, 5)


class TestQuantileForecaster:
    """Test the per-subperiod forecaster"""

    def test_fans_for_a_path(self, rng):
        """Ten sorted fans, one per subperiod"""
        point = rng.uniform(30.0, 60.0, size=(10, 40))
        observed = point + rng.normal(0.0, 2.0, size=(10, 40))
        forecaster = QuantileForecaster(min_observations=30)
        coefficients = forecaster.fit(point, observed)
        assert coefficients[0].shape == (10, PERCENTILES.size)
        fans = forecaster.fans(coefficients, point[:, -1])
        assert len(fans) == 10
        assert [f.subperiod for f in fans] == list(range(1, 11))
        assert all(np.all(np.diff(f.values) >= 0) for f in fans)

    def test_window_too_short(self, rng):
        """The calibration window must reach the minimum size"""
        with pytest.raises(ValueError):
            QuantileForecaster(min_observations=30).fit(rng.normal(size=(10, 20)), rng.normal(size=(10, 20)))
