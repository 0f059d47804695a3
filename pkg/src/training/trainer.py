"""
Training loop: seeded minibatch Adam, validation-based early stopping, lr-grid selection.

Random streams are derived from ``(seed, stream)`` pairs so that initialisation, shuffling,
training queries and evaluation queries never share a generator.
"""
import time
from dataclasses import dataclass, field
from typing import Any, Callable, List, Optional

import numpy as np
import structlog

from ..errors import InvalidArgumentError, NumericalDomainError, TrainingDivergedError
from ..models.params import ParamSet
from ..models.training import CheckpointMeta, MetricRecord, QuerySpec, TrainConfig
from .backward import LOG2E, batch_gradient, chunk_bounds
from .models import ModelAdapter, Score, build_model
from .optimizer import AdamState, adam_step
from .query_loss import nce

logger = structlog.get_logger()

STREAM_INIT = 0
STREAM_SHUFFLE = 1
STREAM_QUERY = 2
STREAM_EVAL = 3

MetricsSink = Callable[[MetricRecord], None]


def stream(seed: int, stream_id: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream_id])


@dataclass
class EvalReport:
    """Evaluation totals over one split."""
    total_bits: float
    n_predicted: int
    n_samples: int
    iou: Optional[float] = None

    @property
    def nce(self) -> float:
        return nce(self.total_bits, self.n_predicted)

    @property
    def loss_bits(self) -> float:
        return self.total_bits / self.n_samples


@dataclass
class TrainResult:
    params: ParamSet
    meta: CheckpointMeta
    metrics: List[MetricRecord] = field(default_factory=list)
    diverged_lrs: List[float] = field(default_factory=list)


def evaluate(
    adapter: ModelAdapter,
    params: ParamSet,
    data: Any,
    seed: int,
    query: Optional[QuerySpec] = None,
) -> EvalReport:
    """Masked cross-entropy (and IOU for the grid model) over a whole split.

    Query masks come from the evaluation stream of ``seed``, so repeated calls see the
    same masks.
    """
    n = len(data)
    if n == 0:
        raise InvalidArgumentError("cannot evaluate an empty split")
    masks = adapter.sample_masks(n, stream(seed, STREAM_EVAL), training=False, spec=query)
    score = Score()
    for lo, hi in chunk_bounds(n):
        score = score + adapter.score(params, data[lo:hi], None if masks is None else masks[lo:hi])
    iou = score.iou_total / n if adapter.kind == "gmrf" else None
    return EvalReport(score.total_bits, score.n_predicted, score.n_samples, iou)


class _Diverged(Exception):
    pass


def _train_one_lr(
    adapter: ModelAdapter,
    config: TrainConfig,
    lr: float,
    train_data: Any,
    valid_data: Any,
    emit: MetricsSink,
) -> TrainResult:
    params = adapter.init_params(train_data, stream(config.seed, STREAM_INIT))
    shuffle_rng = stream(config.seed, STREAM_SHUFFLE)
    query_rng = stream(config.seed, STREAM_QUERY)
    opt_state = AdamState()
    n = len(train_data)

    report = evaluate(adapter, params, valid_data, config.seed)
    emit(MetricRecord(epoch=0, split="valid", loss_bits=report.loss_bits, nce=report.nce,
                      lr=lr, iou=report.iou, event="init"))
    best_nce, best_params, best_epoch = report.nce, params, 0
    since_best = 0

    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        order = shuffle_rng.permutation(n)
        epoch_nats = 0.0
        epoch_targets = 0
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            batch = train_data[idx]
            masks = adapter.sample_masks(len(idx), query_rng, training=True)
            try:
                loss, grads = batch_gradient(adapter, params, batch, masks, config.threads)
            except NumericalDomainError as e:
                raise _Diverged(str(e)) from e
            if not np.isfinite(loss) or not grads.is_finite():
                raise _Diverged(f"non-finite loss at epoch {epoch}")
            params, opt_state = adam_step(opt_state, params, grads, lr)
            epoch_nats += loss * len(idx)
            epoch_targets += int((masks == 0).sum()) if masks is not None else int(np.prod(batch.labels.shape))
        wall_ms = (time.perf_counter() - started) * 1000.0 if config.record_wall_time else 0.0
        emit(MetricRecord(epoch=epoch, split="train", loss_bits=epoch_nats * LOG2E / n,
                          nce=epoch_nats * LOG2E / max(epoch_targets, 1), lr=lr, wall_ms=wall_ms))

        try:
            report = evaluate(adapter, params, valid_data, config.seed)
        except NumericalDomainError as e:
            raise _Diverged(str(e)) from e
        if not np.isfinite(report.nce):
            raise _Diverged(f"non-finite validation NCE at epoch {epoch}")
        emit(MetricRecord(epoch=epoch, split="valid", loss_bits=report.loss_bits, nce=report.nce,
                          lr=lr, wall_ms=wall_ms, iou=report.iou))
        logger.info("Epoch finished", lr=lr, epoch=epoch, train_loss_bits=epoch_nats * LOG2E / n,
                    valid_nce=report.nce)

        if report.nce < best_nce:
            best_nce, best_params, best_epoch = report.nce, params, epoch
            since_best = 0
        else:
            since_best += 1
            if since_best > config.patience:
                logger.info("Early stopping", lr=lr, epoch=epoch, best_epoch=best_epoch)
                break

    meta = CheckpointMeta(
        epoch=best_epoch,
        best_valid_nce=best_nce,
        seed=config.seed,
        lr=lr,
        layers=config.layers,
        temperature=config.temperature,
        epsilon=config.epsilon,
        query=config.query.to_string(),
        image_shape=config.image_shape,
    )
    return TrainResult(params=best_params, meta=meta)


def train(
    config: TrainConfig,
    train_data: Any,
    valid_data: Any,
    metrics_sink: Optional[MetricsSink] = None,
) -> TrainResult:
    """Run the full procedure for every learning rate and keep the best validation model.

    Raises:
        TrainingDivergedError: every learning rate produced a non-finite loss
    """
    if len(train_data) == 0 or len(valid_data) == 0:
        raise InvalidArgumentError("training and validation splits must be non-empty")
    adapter = build_model(config)
    records: List[MetricRecord] = []

    def emit(record: MetricRecord) -> None:
        records.append(record)
        if metrics_sink is not None:
            metrics_sink(record)

    best: Optional[TrainResult] = None
    diverged: List[float] = []
    for lr in config.learning_rates():
        logger.info("Training started", model=str(config.model), lr=lr, n_train=len(train_data))
        try:
            result = _train_one_lr(adapter, config, lr, train_data, valid_data, emit)
        except _Diverged as e:
            logger.warning("Training diverged", lr=lr, reason=str(e))
            emit(MetricRecord(epoch=0, split="train", loss_bits=float("nan"), nce=float("nan"),
                              lr=lr, event="diverged"))
            diverged.append(lr)
            continue
        if best is None or result.meta.best_valid_nce < best.meta.best_valid_nce:
            best = result

    if best is None:
        raise TrainingDivergedError(f"training diverged for every learning rate: {diverged}")
    best.metrics = records
    best.diverged_lrs = diverged
    logger.info("Training finished", best_lr=best.meta.lr, best_valid_nce=best.meta.best_valid_nce)
    return best
