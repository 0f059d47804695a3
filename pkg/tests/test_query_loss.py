"""Tests for query sampling and the cross-entropy metrics."""
import sys
import os

# Add the project root to Python path
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

# Set test environment
os.environ["ENVIRONMENT"] = "test"

import numpy as np
import pytest
from pydantic import ValidationError
from src.errors import InvalidArgumentError, NumericalDomainError
from src.models.training import QuerySpec
from src.training.query_loss import (
    baseline_nce,
    ce_categorical,
    gaussian_baseline,
    masked_ce_binary,
    masked_ce_gaussian,
    nce,
    sample_query,
    sample_query_batch,
    uniform_nce,
)


class TestQuerySpec:
    """Test parsing of query strings."""

    @pytest.mark.parametrize("text", ["bernoulli:0.5", "patch:3x4", "fixed", "fixed:1,0,1"])
    def test_round_trip(self, text):
        assert QuerySpec.parse(text).to_string() == text

    @pytest.mark.parametrize("text", ["bernoulli:1.5", "patch:3", "fixed:1,2", "sometimes:0.5", "bernoulli:x"])
    def test_invalid(self, text):
        with pytest.raises((ValueError, ValidationError)):
            QuerySpec.parse(text)


class TestSampleQuery:
    """Test query mask sampling."""

    def test_bernoulli_rate(self):
        q = sample_query(QuerySpec.parse("bernoulli:0.5"), 10_000, np.random.default_rng(0))
        assert 0.48 <= q.mean() <= 0.52
        assert set(np.unique(q)) <= {0.0, 1.0}

    def test_bernoulli_extremes(self):
        rng = np.random.default_rng(1)
        assert sample_query(QuerySpec.parse("bernoulli:0"), 20, rng).sum() == 0
        assert sample_query(QuerySpec.parse("bernoulli:1"), 20, rng).sum() == 20

    def test_fixed_mask(self):
        q = sample_query(QuerySpec.parse("fixed:1,0,1"), 3, np.random.default_rng(0))
        np.testing.assert_array_equal(q, [1, 0, 1])

    def test_fixed_mask_length(self):
        with pytest.raises(InvalidArgumentError):
            sample_query(QuerySpec.parse("fixed:1,0"), 3, np.random.default_rng(0))

    def test_patch_hides_one_rectangle(self):
        q = sample_query(QuerySpec.parse("patch:2x3"), (5, 6), np.random.default_rng(2)).reshape(5, 6)
        hidden = np.argwhere(q == 0)
        assert len(hidden) == 6
        assert np.ptp(hidden[:, 0]) == 1
        assert np.ptp(hidden[:, 1]) == 2

    def test_patch_needs_grid(self):
        with pytest.raises(InvalidArgumentError):
            sample_query(QuerySpec.parse("patch:2x2"), 16, np.random.default_rng(0))

    def test_patch_must_fit(self):
        with pytest.raises(InvalidArgumentError):
            sample_query(QuerySpec.parse("patch:5x2"), (4, 4), np.random.default_rng(0))

    def test_resample_empty(self):
        masks = sample_query_batch(QuerySpec.parse("bernoulli:0.9"), 200, 3, np.random.default_rng(3), resample_empty=True)
        assert masks.shape == (200, 3)
        assert np.all((masks == 0).any(axis=1))

    def test_resample_gives_up(self):
        with pytest.raises(InvalidArgumentError):
            sample_query_batch(QuerySpec.parse("fixed:1,1"), 2, 2, np.random.default_rng(0), resample_empty=True)

    def test_same_seed_same_masks(self):
        spec = QuerySpec.parse("bernoulli:0.3")
        a = sample_query_batch(spec, 10, 8, np.random.default_rng(42))
        b = sample_query_batch(spec, 10, 8, np.random.default_rng(42))
        np.testing.assert_array_equal(a, b)


class TestCrossEntropy:
    """Test the bit-valued losses."""

    def test_binary(self):
        bits, count = masked_ce_binary(np.array([1.0, 0.0]), np.array([0.9, 0.9]), np.zeros(2))
        assert bits == pytest.approx(3.474, abs=1e-3)
        assert count == 2

    def test_binary_ignores_evidence(self):
        bits, count = masked_ce_binary(np.array([1.0, 0.0]), np.array([0.9, 0.9]), np.array([0.0, 1.0]))
        assert bits == pytest.approx(-np.log2(0.9))
        assert count == 1

    def test_binary_clamps_certainty(self):
        bits, _ = masked_ce_binary(np.array([1.0]), np.array([0.0]), np.zeros(1))
        assert np.isfinite(bits)

    def test_gaussian_peak(self):
        bits, count = masked_ce_gaussian(np.zeros(1), np.zeros(1), np.ones(1), np.zeros(1))
        assert bits == pytest.approx(1.3257, abs=1e-4)
        assert count == 1

    def test_gaussian_zero_bits(self):
        bits, _ = masked_ce_gaussian(np.zeros(1), np.zeros(1), np.full(1, 1.0 / (2.0 * np.pi)), np.zeros(1))
        assert bits == pytest.approx(0.0, abs=1e-12)

    def test_gaussian_rejects_non_positive_variance(self):
        with pytest.raises(NumericalDomainError):
            masked_ce_gaussian(np.zeros(1), np.zeros(1), np.zeros(1), np.zeros(1))

    def test_categorical(self):
        bits, count = ce_categorical(np.array([0]), np.array([[1 / 3, 1 / 3, 1 / 3]]))
        assert bits == pytest.approx(1.585, abs=1e-3)
        assert count == 1
        bits, _ = ce_categorical(np.array([0]), np.array([[0.5, 0.25, 0.25]]))
        assert bits == pytest.approx(1.0)

    def test_nce_needs_targets(self):
        assert nce(6.0, 3) == 2.0
        with pytest.raises(InvalidArgumentError):
            nce(1.0, 0)


class TestBaselines:
    """Test the reference predictors."""

    def test_uniform_is_one_bit(self):
        masks = np.array([[0, 1, 0], [1, 0, 0]], dtype=np.float64)
        assert uniform_nce(masks) == pytest.approx(1.0)
        assert uniform_nce(masks, np.ones_like(masks)) == pytest.approx(1.0)

    def test_gaussian_baseline(self):
        train = np.array([[0.0, 1.0], [2.0, 1.0]])
        mean, var = gaussian_baseline(train)
        np.testing.assert_allclose(mean, [1.0, 1.0])
        assert var[0] == pytest.approx(1.0)
        assert var[1] > 0

    def test_gaussian_baseline_needs_rows(self):
        with pytest.raises(InvalidArgumentError):
            gaussian_baseline(np.zeros((1, 3)))

    def test_baseline_nce_on_mean(self):
        data = np.zeros((2, 2))
        value = baseline_nce(data, np.zeros(2), np.ones(2), np.zeros((2, 2)))
        assert value == pytest.approx(0.5 * np.log2(2 * np.pi))


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
