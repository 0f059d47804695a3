"""Tests for the scalar message kernels."""
import sys
import os

# Add the project root to Python path
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

# Set test environment
os.environ["ENVIRONMENT"] = "test"

import numpy as np
import pytest
from src.errors import InvalidArgumentError
from src.inference.numerics import (
    LOGIT_CLIP,
    MIN_TEMPERATURE,
    binary_transfer,
    binary_transfer_grads,
    log_normalize,
    logit,
    sigmoid,
    tau_for_temperature,
    temperature_from_tau,
    temperature_slope,
    tempered_logsumexp,
    tempered_softplus,
)


class TestTemperedSoftplus:
    """Test T·log(1 + e^{x/T}) and its zero-temperature branch."""

    def test_log_two_at_origin(self):
        """softplus(0) at T = 1 is log 2."""
        assert tempered_softplus(0.0, 1.0) == pytest.approx(0.693147, abs=1e-6)

    def test_zero_temperature_is_relu(self):
        assert tempered_softplus(5.0, 0.0) == 5.0
        assert tempered_softplus(-3.0, 0.0) == 0.0

    def test_half_temperature(self):
        assert tempered_softplus(2.0, 0.5) == pytest.approx(2.009075, abs=1e-6)

    def test_large_input_does_not_overflow(self):
        assert tempered_softplus(1e4, 1.0) == pytest.approx(1e4)

    def test_array_input_keeps_shape(self):
        out = tempered_softplus(np.zeros((2, 3)), 1.0)
        assert out.shape == (2, 3)

    @pytest.mark.parametrize("x,T", [(np.nan, 1.0), (np.inf, 1.0), (0.0, -0.1)])
    def test_invalid_arguments(self, x, T):
        with pytest.raises(InvalidArgumentError):
            tempered_softplus(x, T)


class TestBinaryTransfer:
    """Test the logit-space pairwise message f_w(x)."""

    def test_zero_input_gives_zero(self):
        """No information in means no information out, for any weight and temperature."""
        for w in (-3.0, 0.5, 7.0):
            for T in (0.0, 0.3, 2.0):
                assert binary_transfer(w, 0.0, T) == pytest.approx(0.0, abs=1e-15)

    def test_max_product_truncates(self):
        assert binary_transfer(2.0, 5.0, 0.0) == 2.0
        assert binary_transfer(-2.0, 5.0, 0.0) == -2.0
        assert binary_transfer(2.0, 1.5, 0.0) == 1.5

    def test_unit_weight_unit_input(self):
        expected = np.log1p(np.exp(2.0)) - np.log(2.0) - 1.0
        assert binary_transfer(1.0, 1.0, 1.0) == pytest.approx(0.433781, abs=1e-6)
        assert binary_transfer(1.0, 1.0, 1.0) == pytest.approx(expected, rel=1e-12)

    def test_matches_closed_form_at_unit_temperature(self):
        rng = np.random.default_rng(0)
        w = rng.uniform(-3, 3, 200)
        x = rng.uniform(-6, 6, 200)
        closed = np.logaddexp(0.0, x + w) - np.logaddexp(0.0, x - w) - w
        np.testing.assert_allclose(binary_transfer(w, x, 1.0), closed, atol=1e-12)

    def test_huge_evidence_saturates_to_weight(self):
        assert binary_transfer(1.5, LOGIT_CLIP, 1.0) == pytest.approx(1.5, abs=1e-12)
        assert binary_transfer(1.5, -LOGIT_CLIP, 1.0) == pytest.approx(-1.5, abs=1e-12)

    def test_continuity_towards_zero_temperature(self):
        rng = np.random.default_rng(1)
        w = rng.uniform(-3, 3, 500)
        x = rng.uniform(-6, 6, 500)
        np.testing.assert_allclose(binary_transfer(w, x, 1e-6), binary_transfer(w, x, 0.0), atol=1e-4)

    def test_odd_in_input_and_weight(self):
        rng = np.random.default_rng(2)
        w = rng.uniform(-3, 3, 500)
        x = rng.uniform(-6, 6, 500)
        f = binary_transfer(w, x, 0.7)
        np.testing.assert_allclose(binary_transfer(w, -x, 0.7), -f, atol=1e-12)
        np.testing.assert_allclose(binary_transfer(-w, x, 0.7), -f, atol=1e-12)

    @pytest.mark.parametrize("T", [0.1, 0.5, 1.0])
    def test_saturation_over_wide_range(self, T):
        rng = np.random.default_rng(3)
        w = rng.uniform(-10, 10, 5000)
        x = rng.uniform(-50, 50, 5000)
        assert np.all(np.abs(binary_transfer(w, x, T)) <= np.abs(w) + 1e-12)

    def test_rejects_non_finite(self):
        with pytest.raises(InvalidArgumentError):
            binary_transfer(np.inf, 0.0, 1.0)


class TestBinaryTransferGrads:
    """Test the analytic partial derivatives against central differences."""

    @pytest.mark.parametrize("T", [0.2, 1.0, 2.5])
    def test_against_central_differences(self, T):
        rng = np.random.default_rng(3)
        w = rng.uniform(-2, 2, 100)
        x = rng.uniform(-4, 4, 100)
        h = 1e-6
        dw, dx, dT = binary_transfer_grads(w, x, T)
        np.testing.assert_allclose(dw, (binary_transfer(w + h, x, T) - binary_transfer(w - h, x, T)) / (2 * h), atol=1e-6)
        np.testing.assert_allclose(dx, (binary_transfer(w, x + h, T) - binary_transfer(w, x - h, T)) / (2 * h), atol=1e-6)
        np.testing.assert_allclose(dT, (binary_transfer(w, x, T + h) - binary_transfer(w, x, T - h)) / (2 * h), atol=1e-6)

    def test_zero_temperature_rejected(self):
        with pytest.raises(InvalidArgumentError):
            binary_transfer_grads(1.0, 1.0, 0.0)

    def test_scalars_stay_scalars(self):
        dw, dx, dT = binary_transfer_grads(0.5, 0.2, 1.0)
        assert all(isinstance(g, float) for g in (dw, dx, dT))


class TestSigmoidLogit:
    """Test sigmoid and the clipped logit."""

    def test_sigmoid_symmetry(self):
        assert sigmoid(0.0) == 0.5

    def test_logit_clips_at_certainty(self):
        assert logit(1.0) == LOGIT_CLIP
        assert logit(0.0) == -LOGIT_CLIP

    def test_inverse_pair(self):
        assert logit(sigmoid(3.7)) == pytest.approx(3.7, abs=1e-12)

    @pytest.mark.parametrize("p", [-0.1, 1.5, np.nan])
    def test_logit_domain(self, p):
        with pytest.raises(InvalidArgumentError):
            logit(p)


class TestLogNormalize:
    """Test log-space normalisation."""

    def test_uniform_pair(self):
        np.testing.assert_allclose(log_normalize([0.0, 0.0]), [-np.log(2)] * 2)

    def test_shift_invariance(self):
        np.testing.assert_allclose(log_normalize([4.2, 4.2, 4.2]), [-np.log(3)] * 3)

    def test_two_values(self):
        np.testing.assert_allclose(log_normalize([1.0, 0.0]), [-0.313262, -1.313262], atol=1e-6)

    def test_empty_vector(self):
        with pytest.raises(InvalidArgumentError):
            log_normalize([])


class TestTemperatureParameterisation:
    """Test the softplus reparameterisation of the learned temperature."""

    def test_round_trip(self):
        for T in (0.01, 0.5, 1.0, 3.0, 50.0):
            assert temperature_from_tau(tau_for_temperature(T)) == pytest.approx(T, rel=1e-12)

    def test_always_above_floor(self):
        assert temperature_from_tau(-50.0) > 0.0
        assert temperature_from_tau(-50.0) >= MIN_TEMPERATURE

    def test_slope_matches_difference(self):
        h = 1e-6
        numeric = (temperature_from_tau(0.3 + h) - temperature_from_tau(0.3 - h)) / (2 * h)
        assert temperature_slope(0.3) == pytest.approx(numeric, rel=1e-6)

    def test_unreachable_temperature(self):
        with pytest.raises(InvalidArgumentError):
            tau_for_temperature(MIN_TEMPERATURE / 2)

    def test_tempered_logsumexp_limits(self):
        x = np.array([[0.0, 1.0, -2.0]])
        assert tempered_logsumexp(x, 0.0)[0] == 1.0
        assert tempered_logsumexp(x, 1.0)[0] == pytest.approx(np.log(np.exp(x).sum()))


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
