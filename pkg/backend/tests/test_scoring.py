"""
Tests for the proper scoring rules
"""
import pytest
import numpy as np
from datetime import date

from exceptions import SingleSample, SingularCovariance
from market_data.calendar import DeliveryKey
from scoring.scoring_rules import (crps, crps_margins, dawid_sebastiani, energy_score, median_absolute_errors,
                                   score_ensemble, variogram_score)


def brute_crps(x, y):
    return np.mean(np.abs(x - y)) - np.abs(x[:, None] - x[None, :]).sum() / (2 * len(x) ** 2)


def brute_energy(x, y):
    M = len(x)
    pairs = sum(np.linalg.norm(x[m] - x[n]) for m in range(M) for n in range(m + 1, M))
    return np.mean(np.linalg.norm(x - y, axis=1)) - pairs / (M * (M - 1))


class TestCrps:
    """Test the sample CRPS"""

    def test_two_point_fixture(self):
        """Samples {0, 2} against 1 score 0.5"""
        assert crps([0.0, 2.0], 1.0) == pytest.approx(0.5, abs=1e-12)

    def test_matches_double_sum(self, rng):
        """Sorted-sample formula equals the double sum"""
        x = rng.normal(size=57)
        assert crps(x, 0.3) == pytest.approx(brute_crps(x, 0.3), abs=1e-12)

    def test_margins(self, rng):
        """Column-wise CRPS of an ensemble"""
        x = rng.normal(size=(40, 3))
        y = np.array([0.0, 1.0, -1.0])
        np.testing.assert_allclose(crps_margins(x, y), [brute_crps(x[:, j], y[j]) for j in range(3)], atol=1e-12)

    def test_point_mass(self):
        """A single sample reduces to the absolute error"""
        assert crps([3.0], 1.0) == pytest.approx(2.0)


class TestEnergyScore:
    """Test the energy score"""

    def test_symmetric_fixture(self):
        """{(0,0),(2,2)} against (1,1) scores 0"""
        assert energy_score(np.array([[0.0, 0.0], [2.0, 2.0]]), np.array([1.0, 1.0])) == pytest.approx(0.0, abs=1e-12)

    def test_matches_brute_force(self, rng):
        """Vectorized estimator equals the pairwise loop"""
        x = rng.normal(size=(25, 10))
        y = rng.normal(size=10)
        assert energy_score(x, y) == pytest.approx(brute_energy(x, y), abs=1e-10)

    @pytest.mark.parametrize("scale, shift", [(2.5, 0.0), (1.0, -40.0), (0.3, 12.0)])
    def test_homogeneous_and_translation_invariant(self, rng, scale, shift):
        """Scaling prices scales ES and CRPS by the same factor and a common shift changes nothing"""
        x = rng.normal(50.0, 4.0, size=(30, 10))
        y = rng.normal(50.0, 4.0, size=10)
        moved = energy_score(scale * x + shift, scale * y + shift)
        assert moved == pytest.approx(scale * energy_score(x, y), rel=1e-10)
        np.testing.assert_allclose(crps_margins(scale * x + shift, scale * y + shift), scale * crps_margins(x, y),
                                   rtol=1e-9, atol=1e-12)

    def test_sample_order_does_not_matter(self, rng):
        """Shuffling the ensemble rows leaves ES unchanged"""
        x = rng.normal(size=(20, 10))
        y = rng.normal(size=10)
        assert energy_score(x[rng.permutation(20)], y) == pytest.approx(energy_score(x, y), abs=1e-12)

    def test_single_sample(self):
        """The pairwise term needs two samples"""
        with pytest.raises(SingleSample):
            energy_score(np.zeros((1, 10)), np.zeros(10))


class TestDawidSebastiani:
    """Test the Dawid-Sebastiani score"""

    def test_square_fixture(self):
        """Four corners of the square against (2, 0)"""
        x = np.array([[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]])
        assert dawid_sebastiani(x, np.array([2.0, 0.0])) == pytest.approx(np.log(16 / 9) + 3, abs=1e-9)

    def test_matches_brute_force(self, rng):
        """Cholesky evaluation equals log det plus the explicit inverse"""
        x = rng.normal(size=(40, 10)) @ rng.normal(size=(10, 10))
        y = rng.normal(size=10)
        S = np.cov(x, rowvar=False, ddof=1)
        k = y - x.mean(axis=0)
        expected = np.log(np.linalg.det(S)) + k @ np.linalg.inv(S) @ k
        assert dawid_sebastiani(x, y) == pytest.approx(expected, rel=1e-8)
        assert dawid_sebastiani(x[rng.permutation(40)], y) == pytest.approx(expected, rel=1e-8)

    def test_too_few_samples(self):
        """M <= D leaves the covariance singular"""
        with pytest.raises(SingularCovariance):
            dawid_sebastiani(np.eye(3), np.zeros(3))

    def test_jitter_on_collinear_samples(self, rng):
        """Identical columns are rescued by the jitter"""
        column = rng.normal(size=(30, 1))
        x = np.hstack([column, column, rng.normal(size=(30, 1))])
        assert np.isfinite(dawid_sebastiani(x, np.zeros(3)))


class TestVariogram:
    """Test the variogram score"""

    def test_two_dimensional_fixture(self):
        """Single sample (0,1) against (0,2) scores 0.5"""
        assert variogram_score(np.array([[0.0, 1.0]]), np.array([0.0, 2.0]), p=1.0) == pytest.approx(0.5)

    def test_half_order(self):
        """p = 0.5 uses square-root increments"""
        expected = 2 * 0.25 * (np.sqrt(2.0) - 1.0) ** 2
        assert variogram_score(np.array([[0.0, 1.0]]), np.array([0.0, 2.0]), p=0.5) == pytest.approx(expected)

    @pytest.mark.parametrize("p", [0.5, 1.0])
    def test_matches_brute_force(self, rng, p):
        """Vectorized score equals the double loop over subperiod pairs"""
        x = rng.normal(size=(15, 6))
        y = rng.normal(size=6)
        weights = rng.uniform(size=(6, 6))
        expected = sum(
            weights[i, j] * (abs(y[i] - y[j]) ** p - np.mean([abs(row[i] - row[j]) ** p for row in x])) ** 2
            for i in range(6) for j in range(6)
        )
        assert variogram_score(x, y, p=p, weights=weights) == pytest.approx(expected, rel=1e-10)

    def test_permutation_invariance(self, rng):
        """Reordering samples, or subperiods together with their weights, keeps the score"""
        x = rng.normal(size=(25, 10))
        y = rng.normal(size=10)
        weights = rng.uniform(size=(10, 10))
        base = variogram_score(x, y, weights=weights)
        assert variogram_score(x[rng.permutation(25)], y, weights=weights) == pytest.approx(base, rel=1e-12)
        order = rng.permutation(10)
        moved = variogram_score(x[:, order], y[order], weights=weights[np.ix_(order, order)])
        assert moved == pytest.approx(base, rel=1e-12)

    def test_invalid_arguments(self):
        """Order must be positive and weights D x D nonnegative"""
        with pytest.raises(ValueError):
            variogram_score(np.zeros((2, 2)), np.zeros(2), p=0.0)
        with pytest.raises(ValueError):
            variogram_score(np.zeros((2, 2)), np.zeros(2), weights=-np.ones((2, 2)))


class TestScoreEnsemble:
    """Test the per-market score record"""

    def test_record(self, rng):
        """All scores plus per-subperiod CRPS and MAE"""
        x = rng.normal(50.0, 3.0, size=(200, 10))
        y = np.full(10, 50.0)
        record = score_ensemble(x, y, DeliveryKey(date(2021, 2, 15), 9))
        assert record["peak_flag"] == "on"
        assert record["date"] == "2021-02-15"
        for name in ["es", "dss", "vs1", "vs05", "crps_t1", "crps_t10", "mae_t10"]:
            assert np.isfinite(record[name])
        np.testing.assert_allclose([record[f"mae_t{j}"] for j in range(1, 11)], median_absolute_errors(x, y))

    def test_singular_dss_is_missing(self):
        """A degenerate ensemble keeps the other scores and leaves dss as NaN"""
        record = score_ensemble(np.zeros((5, 10)), np.zeros(10))
        assert np.isnan(record["dss"])
        assert record["es"] == pytest.approx(0.0)
