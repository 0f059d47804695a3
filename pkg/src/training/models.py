"""
Per-kind adapters giving the trainer one interface over the four model families.

Every adapter works on numpy batches: ``[n, V]`` rows for the RBM, DBM and GRBM, and a
``BorderOwnershipSet`` for the grid model. Losses and gradients returned by
``loss_and_grads`` are batch sums in nats; the trainer divides by the batch size.
"""
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import structlog

from ..datasets.border_ownership import BorderOwnershipSet
from ..errors import InvalidArgumentError
from ..inference.binary_qtnn import (
    dbm_backward,
    dbm_forward,
    init_dbm_params,
    init_rbm_params,
    rbm_backward,
    rbm_forward,
    rbm_forward_soft,
    to_spin,
)
from ..inference.gaussian_qtnn import grbm_backward, grbm_forward, init_grbm_params
from ..inference.grid_mrf import (
    aggregate_labels,
    decode_labels,
    estimate_noise,
    gmrf_backward,
    gmrf_forward,
    init_gmrf_params,
    iou,
)
from ..models.params import GradientBundle, ModelKind, ParamSet
from ..models.training import GrbmConfig, QuerySpec, TrainConfig
from .query_loss import ce_categorical, masked_ce_binary, masked_ce_gaussian, sample_query_batch

logger = structlog.get_logger()


@dataclass
class Score:
    """Additive evaluation totals."""
    total_bits: float = 0.0
    n_predicted: int = 0
    n_samples: int = 0
    iou_total: float = 0.0

    def __add__(self, other: "Score") -> "Score":
        return Score(
            self.total_bits + other.total_bits,
            self.n_predicted + other.n_predicted,
            self.n_samples + other.n_samples,
            self.iou_total + other.iou_total,
        )


class ModelAdapter:
    """Shared plumbing; subclasses implement the forward/backward for one kind."""

    kind: ModelKind

    def __init__(self, config: TrainConfig):
        self.config = config

    def sample_masks(
        self,
        n: int,
        rng: np.random.Generator,
        training: bool,
        spec: Optional[QuerySpec] = None,
    ) -> Optional[np.ndarray]:
        spec = spec or self.config.query
        shape = self.config.image_shape if spec.kind == "patch" else self.config.visible
        if spec.kind == "patch" and shape is None:
            raise InvalidArgumentError("patch queries need image_shape")
        return sample_query_batch(spec, n, shape, rng, resample_empty=training)

    def init_params(self, train: Any, rng: np.random.Generator) -> ParamSet:
        raise NotImplementedError

    def loss_and_grads(self, params: ParamSet, batch: Any, masks: Optional[np.ndarray]) -> Tuple[float, GradientBundle]:
        raise NotImplementedError

    def score(self, params: ParamSet, batch: Any, masks: Optional[np.ndarray]) -> Score:
        raise NotImplementedError

    def predict(self, params: ParamSet, batch: Any, masks: Optional[np.ndarray]) -> List[Dict[str, Any]]:
        raise NotImplementedError


class RbmAdapter(ModelAdapter):
    kind = ModelKind.RBM

    def init_params(self, train, rng):
        return init_rbm_params(self.config.visible, self.config.hidden, rng)

    def _forward(self, params, batch, masks):
        return rbm_forward(params, to_spin(batch), masks, self.config.layers, self.config.temperature)

    def loss_and_grads(self, params, batch, masks):
        _, _, trace = self._forward(params, batch, masks)
        return rbm_backward(
            params, to_spin(batch), masks, trace, self.config.temperature, reduction="sum"
        )

    def score(self, params, batch, masks):
        v_hat = self._forward(params, batch, masks)[0]
        bits, count = masked_ce_binary(batch, v_hat, masks)
        return Score(bits, count, len(batch))

    def predict(self, params, batch, masks):
        v_hat, h_hat, _ = self._forward(params, batch, masks)
        return [{"probabilities": v.tolist(), "hidden": h.tolist()} for v, h in zip(v_hat, h_hat)]

    def predict_soft(self, params, probs, masks):
        """Marginals when each evidence unit is only known with probability ``probs``."""
        if self.kind != ModelKind.RBM:
            raise InvalidArgumentError(f"soft evidence is not supported for {self.kind.value} models")
        v_hat, h_hat, _ = rbm_forward_soft(params, probs, masks, self.config.layers, self.config.temperature)
        return [{"probabilities": v.tolist(), "hidden": h.tolist()} for v, h in zip(v_hat, h_hat)]


class DbmAdapter(RbmAdapter):
    kind = ModelKind.DBM

    def init_params(self, train, rng):
        return init_dbm_params(self.config.visible, self.config.hidden, self.config.hidden2, rng)

    def _forward(self, params, batch, masks):
        return dbm_forward(params, to_spin(batch), masks, self.config.layers, self.config.temperature)

    def loss_and_grads(self, params, batch, masks):
        trace = self._forward(params, batch, masks)[-1]
        return dbm_backward(
            params, to_spin(batch), masks, trace, self.config.temperature, reduction="sum"
        )

    def predict(self, params, batch, masks):
        v_hat, h1_hat, h2_hat, _ = self._forward(params, batch, masks)
        return [
            {"probabilities": v.tolist(), "hidden1": h1.tolist(), "hidden2": h2.tolist()}
            for v, h1, h2 in zip(v_hat, h1_hat, h2_hat)
        ]


class GrbmAdapter(ModelAdapter):
    kind = ModelKind.GRBM

    @property
    def grbm_config(self) -> GrbmConfig:
        return GrbmConfig(epsilon=self.config.epsilon, N=self.config.layers)

    def init_params(self, train, rng):
        return init_grbm_params(self.config.visible, self.config.hidden, rng)

    def loss_and_grads(self, params, batch, masks):
        trace = grbm_forward(params, batch, masks, self.grbm_config)[-1]
        return grbm_backward(params, batch, masks, trace, reduction="sum")

    def score(self, params, batch, masks):
        mean, var, _, _ = grbm_forward(params, batch, masks, self.grbm_config)
        bits, count = masked_ce_gaussian(batch, mean, var, masks)
        return Score(bits, count, len(batch))

    def predict(self, params, batch, masks):
        mean, var, _, _ = grbm_forward(params, batch, masks, self.grbm_config)
        return [{"mean": m.tolist(), "var": s.tolist()} for m, s in zip(mean, var)]


class GmrfAdapter(ModelAdapter):
    """Fixed query: the image is observed and every pixel label is a target."""

    kind = ModelKind.GMRF

    @property
    def temperature(self) -> float:
        return 1.0 if self.config.temperature is None else self.config.temperature

    def sample_masks(self, n, rng, training, spec=None):
        return None

    def init_params(self, train: BorderOwnershipSet, rng):
        noise = estimate_noise(train.pairs())
        logger.info("Estimated emission noise", p_contour=noise[0], p_in=noise[1], p_out=noise[2])
        return init_gmrf_params(self.config.n_clones, noise, rng)

    def loss_and_grads(self, params, batch: BorderOwnershipSet, masks):
        _, trace = gmrf_forward(params, batch.images, self.config.layers, self.temperature)
        return gmrf_backward(params, batch.labels, trace, reduction="sum")

    def _probabilities(self, params, images) -> np.ndarray:
        beliefs, _ = gmrf_forward(params, images, self.config.layers, self.temperature)
        return aggregate_labels(beliefs)

    def score(self, params, batch: BorderOwnershipSet, masks):
        probs = self._probabilities(params, batch.images)
        bits, count = ce_categorical(batch.labels, probs)
        pred = decode_labels(probs)
        iou_total = sum(iou(p, t) for p, t in zip(pred, batch.labels))
        return Score(bits, count, len(batch), iou_total)

    def predict(self, params, batch: Union[BorderOwnershipSet, np.ndarray], masks):
        images = batch.images if isinstance(batch, BorderOwnershipSet) else batch
        probs = self._probabilities(params, images)
        return [
            {"labels": decode_labels(p).tolist(), "probabilities": p.tolist()}
            for p in probs
        ]


ADAPTERS = {
    ModelKind.RBM: RbmAdapter,
    ModelKind.DBM: DbmAdapter,
    ModelKind.GRBM: GrbmAdapter,
    ModelKind.GMRF: GmrfAdapter,
}


def build_model(config: TrainConfig) -> ModelAdapter:
    """Adapter for ``config.model``."""
    return ADAPTERS[config.model](config)
