"""Tests for the optimizer, the minibatch reduction and the training loop."""
import sys
import os

# Add the project root to Python path
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

# Set test environment
os.environ["ENVIRONMENT"] = "test"

import numpy as np
import pytest
from src.datasets.border_ownership import gen_border_ownership
from src.datasets.synthetic import gen_rbm_samples, gen_texture, random_rbm_params
from src.errors import InvalidArgumentError, TrainingDivergedError
from src.inference.binary_qtnn import init_rbm_params, rbm_backward, rbm_forward, to_spin
from src.inference.gaussian_qtnn import init_grbm_params
from src.models.params import GradientBundle, ModelKind, RbmParams
from src.models.training import QuerySpec, TrainConfig
from src.training import trainer as trainer_module
from src.training.backward import CHUNK_SIZE, LOG2E, backward, batch_gradient, chunk_bounds
from src.training.models import build_model
from src.training.optimizer import AdamState, adam_step, sgd_step
from src.training.trainer import STREAM_EVAL, evaluate, stream, train


@pytest.fixture(scope="module")
def rbm_data():
    rng = np.random.default_rng(0)
    truth = random_rbm_params(6, 3, rng)
    return gen_rbm_samples(truth, 240, rng)


def rbm_config(**overrides):
    values = dict(model=ModelKind.RBM, visible=6, hidden=3, layers=3, batch_size=40,
                  max_epochs=3, patience=5, seed=1, record_wall_time=False)
    values.update(overrides)
    return TrainConfig(**values)


class TestAdam:
    """Test the Adam update."""

    @pytest.fixture
    def params(self):
        return RbmParams(W=np.ones((2, 3)), c_V=np.zeros(3), c_H=np.zeros(2), tau=np.asarray(0.5))

    def test_first_step_moves_by_lr(self, params):
        grads = GradientBundle(ModelKind.RBM, {
            "W": np.array([[2.0, -3.0, 0.5], [1.0, 1.0, -1.0]]),
            "c_V": np.array([1.0, -1.0, 4.0]),
            "c_H": np.array([-0.2, 0.3]),
            "tau": np.asarray(7.0),
        })
        new, state = adam_step(AdamState(), params, grads, lr=0.01)
        np.testing.assert_allclose(new.W - params.W, -0.01 * np.sign(grads.tensors["W"]), rtol=1e-6)
        assert float(new.tau) == pytest.approx(0.49, rel=1e-6)
        assert state.t == 1

    def test_zero_gradient_leaves_params(self, params):
        new, _ = adam_step(AdamState(), params, GradientBundle.zeros_like(params), lr=0.1)
        np.testing.assert_array_equal(new.W, params.W)

    def test_inputs_untouched(self, params):
        grads = GradientBundle.zeros_like(params)
        grads.tensors["W"] = np.ones((2, 3))
        adam_step(AdamState(), params, grads, lr=0.1)
        np.testing.assert_array_equal(params.W, np.ones((2, 3)))

    def test_shape_mismatch(self, params):
        grads = GradientBundle.zeros_like(params)
        grads.tensors["W"] = np.ones((3, 2))
        with pytest.raises(InvalidArgumentError):
            adam_step(AdamState(), params, grads, lr=0.1)

    def test_sgd(self, params):
        grads = GradientBundle.zeros_like(params)
        grads.tensors["c_V"] = np.array([1.0, 2.0, 3.0])
        new = sgd_step(params, grads, lr=0.5)
        np.testing.assert_allclose(new.c_V, [-0.5, -1.0, -1.5])


class TestBatchGradient:
    """Test the order-fixed minibatch reduction."""

    def test_chunk_bounds(self):
        assert chunk_bounds(130) == [(0, CHUNK_SIZE), (CHUNK_SIZE, 2 * CHUNK_SIZE), (2 * CHUNK_SIZE, 130)]
        assert chunk_bounds(0) == []

    def test_thread_count_does_not_change_result(self, rbm_data):
        config = rbm_config()
        adapter = build_model(config)
        params = init_rbm_params(6, 3, np.random.default_rng(2))
        masks = adapter.sample_masks(len(rbm_data), np.random.default_rng(3), training=True)
        loss1, grads1 = batch_gradient(adapter, params, rbm_data, masks, threads=1)
        loss4, grads4 = batch_gradient(adapter, params, rbm_data, masks, threads=4)
        assert loss1 == loss4
        np.testing.assert_array_equal(grads1.flat(), grads4.flat())

    def test_empty_batch(self, rbm_data):
        adapter = build_model(rbm_config())
        params = init_rbm_params(6, 3, np.random.default_rng(2))
        with pytest.raises(InvalidArgumentError):
            batch_gradient(adapter, params, rbm_data[:0], np.zeros((0, 6)))


class TestFullBatchDescent:
    """Plain gradient steps on one fixed minibatch."""

    def test_loss_does_not_increase(self):
        rng = np.random.default_rng(6)
        batch = gen_rbm_samples(random_rbm_params(10, 5, rng), 100, rng)
        adapter = build_model(TrainConfig(model=ModelKind.RBM, visible=10, hidden=5, layers=10,
                                          record_wall_time=False))
        params = adapter.init_params(batch, np.random.default_rng(7))
        masks = adapter.sample_masks(len(batch), np.random.default_rng(8), training=True)
        losses = []
        for _ in range(50):
            loss, grads = batch_gradient(adapter, params, batch, masks)
            losses.append(loss)
            params = sgd_step(params, grads, lr=1e-3)
        assert all(later <= earlier + 1e-12 for earlier, later in zip(losses, losses[1:]))
        assert losses[-1] < losses[0]


class TestBackwardDispatch:
    """Test the kind-agnostic backward entry point."""

    def test_matches_rbm_adjoint_in_bits(self, rbm_data):
        params = init_rbm_params(6, 3, np.random.default_rng(4))
        x01 = rbm_data[:5]
        q = np.tile([1.0, 1.0, 0.0, 1.0, 0.0, 0.0], (5, 1))
        _, _, trace = rbm_forward(params, to_spin(x01), q, N=3)
        loss_bits, grads = backward(params, x01, q, trace)
        loss_nats, expected = rbm_backward(params, to_spin(x01), q, trace)
        assert loss_bits == pytest.approx(loss_nats * LOG2E)
        np.testing.assert_allclose(grads.tensors["W"], expected.tensors["W"])

    def test_trace_of_another_kind(self, rbm_data):
        rng = np.random.default_rng(5)
        _, _, trace = rbm_forward(init_rbm_params(6, 3, rng), to_spin(rbm_data[:2]), np.zeros((2, 6)), N=2)
        with pytest.raises(InvalidArgumentError):
            backward(init_grbm_params(6, 3, rng), rbm_data[:2], np.zeros((2, 6)), trace)


class TestTrainConfig:
    """Test the trainer configuration rules."""

    def test_grid_model_needs_fixed_query(self):
        with pytest.raises(ValueError):
            TrainConfig(model=ModelKind.GMRF, query=QuerySpec.parse("bernoulli:0.5"))

    def test_gaussian_model_has_no_temperature(self):
        with pytest.raises(ValueError):
            TrainConfig(model=ModelKind.GRBM, visible=4, temperature=1.0)

    def test_patch_needs_image_shape(self):
        with pytest.raises(ValueError):
            TrainConfig(model=ModelKind.RBM, visible=16, query=QuerySpec.parse("patch:2x2"))

    def test_query_without_targets(self):
        with pytest.raises(ValueError):
            TrainConfig(model=ModelKind.RBM, visible=2, query=QuerySpec.parse("bernoulli:1"))

    def test_learning_rates(self):
        assert rbm_config().learning_rates() == [0.01]
        assert rbm_config(lr_grid=[0.1, 0.01]).learning_rates() == [0.1, 0.01]


class TestTrainer:
    """Test the training loop end to end on tiny problems."""

    def test_records_start_with_initial_evaluation(self, rbm_data):
        result = train(rbm_config(), rbm_data[:200], rbm_data[200:])
        first = result.metrics[0]
        assert first.epoch == 0 and first.split == "valid" and first.event == "init"
        assert result.meta.best_valid_nce <= first.nce
        assert result.meta.lr == 0.01

    def test_deterministic_for_a_seed(self, rbm_data):
        a = train(rbm_config(), rbm_data[:200], rbm_data[200:])
        b = train(rbm_config(), rbm_data[:200], rbm_data[200:])
        np.testing.assert_array_equal(a.params.W, b.params.W)
        assert [m.model_dump() for m in a.metrics] == [m.model_dump() for m in b.metrics]

    def test_threads_do_not_change_training(self, rbm_data):
        a = train(rbm_config(batch_size=200), rbm_data[:200], rbm_data[200:])
        b = train(rbm_config(batch_size=200, threads=3), rbm_data[:200], rbm_data[200:])
        np.testing.assert_array_equal(a.params.W, b.params.W)

    def test_patience_zero_stops_at_first_plateau(self, rbm_data):
        result = train(rbm_config(patience=0, max_epochs=30, lr=0.3), rbm_data[:200], rbm_data[200:])
        valid = [m for m in result.metrics if m.split == "valid"]
        best = valid[0].nce
        for record in valid[1:-1]:
            assert record.nce < best
            best = record.nce
        assert valid[-1].epoch == 30 or valid[-1].nce >= best

    def test_lr_grid_keeps_best(self, rbm_data):
        result = train(rbm_config(lr_grid=[0.05, 0.001], max_epochs=2), rbm_data[:200], rbm_data[200:])
        finals = {}
        for record in result.metrics:
            if record.split == "valid":
                finals[record.lr] = min(finals.get(record.lr, np.inf), record.nce)
        assert result.meta.best_valid_nce == pytest.approx(min(finals.values()))

    def test_all_learning_rates_diverge(self, rbm_data, monkeypatch):
        def broken(adapter, params, batch, masks, threads=1):
            return float("nan"), GradientBundle.zeros_like(params)

        monkeypatch.setattr(trainer_module, "batch_gradient", broken)
        with pytest.raises(TrainingDivergedError):
            train(rbm_config(lr_grid=[0.1, 0.01]), rbm_data[:200], rbm_data[200:])

    def test_empty_split(self, rbm_data):
        with pytest.raises(InvalidArgumentError):
            train(rbm_config(), rbm_data[:200], rbm_data[:0])

    def test_gaussian_model_trains(self):
        data = gen_texture(60, 3, 3, np.random.default_rng(4))
        config = TrainConfig(model=ModelKind.GRBM, visible=9, hidden=4, layers=3, batch_size=20,
                             max_epochs=2, record_wall_time=False)
        result = train(config, data[:40], data[40:])
        assert result.params.KIND == ModelKind.GRBM
        assert np.isfinite(result.meta.best_valid_nce)

    def test_grid_model_reports_iou(self):
        dataset = gen_border_ownership(8, 7, 7, "rectangle", np.random.default_rng(5), n_spurious=2)
        config = TrainConfig(model=ModelKind.GMRF, query=QuerySpec.parse("fixed"), n_clones=2,
                             layers=2, batch_size=4, max_epochs=1, record_wall_time=False)
        result = train(config, dataset[np.arange(6)], dataset[np.arange(6, 8)])
        valid = [m for m in result.metrics if m.split == "valid"]
        assert all(m.iou is not None and 0.0 <= m.iou <= 1.0 for m in valid)
        assert result.params.n_states == 4


class TestEvaluate:
    """Test split evaluation."""

    def test_same_masks_every_call(self, rbm_data):
        adapter = build_model(rbm_config())
        params = init_rbm_params(6, 3, np.random.default_rng(0))
        a = evaluate(adapter, params, rbm_data, seed=3)
        b = evaluate(adapter, params, rbm_data, seed=3)
        assert a.nce == b.nce
        assert a.n_samples == len(rbm_data)

    def test_untrained_model_near_one_bit(self, rbm_data):
        adapter = build_model(rbm_config())
        zero = RbmParams(W=np.zeros((3, 6)), c_V=np.zeros(6), c_H=np.zeros(3), tau=np.asarray(0.5))
        assert evaluate(adapter, zero, rbm_data, seed=0).nce == pytest.approx(1.0)

    def test_eval_stream_is_separate(self):
        assert not np.array_equal(stream(0, STREAM_EVAL).random(4), stream(0, 0).random(4))


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
