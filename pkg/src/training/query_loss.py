"""Query sampling and the masked cross-entropy metrics, all reported in bits."""
from typing import Optional, Tuple, Union

import numpy as np
import structlog

from ..errors import InvalidArgumentError, NumericalDomainError
from ..models.training import QuerySpec

logger = structlog.get_logger()

PROB_FLOOR = 1e-12
LOG2E = 1.0 / np.log(2.0)
MAX_RESAMPLES = 1000

Shape = Union[int, Tuple[int, int]]


def _length(shape: Shape) -> int:
    return shape if isinstance(shape, int) else shape[0] * shape[1]


def sample_query(spec: QuerySpec, shape: Shape, rng: np.random.Generator) -> np.ndarray:
    """Draw one query mask (1 = evidence, 0 = target) of length V or R*C."""
    V = _length(shape)
    if spec.kind == "bernoulli":
        return (rng.random(V) < spec.p_observe).astype(np.float64)
    if spec.kind == "fixed":
        if spec.mask is None:
            return np.ones(V)
        if len(spec.mask) != V:
            raise InvalidArgumentError(f"fixed mask has {len(spec.mask)} entries, expected {V}")
        return np.asarray(spec.mask, dtype=np.float64)
    if isinstance(shape, int):
        raise InvalidArgumentError("patch queries need a grid shape")
    R, C = shape
    if spec.patch_h > R or spec.patch_w > C:
        raise InvalidArgumentError(f"patch {spec.patch_h}x{spec.patch_w} does not fit a {R}x{C} grid")
    top = rng.integers(0, R - spec.patch_h + 1)
    left = rng.integers(0, C - spec.patch_w + 1)
    mask = np.ones((R, C))
    mask[top:top + spec.patch_h, left:left + spec.patch_w] = 0.0
    return mask.ravel()


def sample_query_batch(
    spec: QuerySpec,
    n: int,
    shape: Shape,
    rng: np.random.Generator,
    resample_empty: bool = False,
) -> np.ndarray:
    """Stack ``n`` masks; with ``resample_empty`` masks without targets are redrawn."""
    masks = np.stack([sample_query(spec, shape, rng) for _ in range(n)]) if n else np.zeros((0, _length(shape)))
    if not resample_empty:
        return masks
    redrawn = 0
    for i in range(n):
        attempts = 0
        while masks[i].all():
            attempts += 1
            if attempts > MAX_RESAMPLES:
                raise InvalidArgumentError(f"query '{spec.to_string()}' never produces a target")
            masks[i] = sample_query(spec, shape, rng)
        redrawn += attempts > 0
    if redrawn:
        logger.debug("Resampled queries without targets", count=redrawn, query=spec.to_string())
    return masks


def masked_ce_binary(v: np.ndarray, v_hat: np.ndarray, q: np.ndarray) -> Tuple[float, int]:
    """Cross-entropy in bits summed over target positions, and the number of targets."""
    v = np.asarray(v, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    p = np.clip(np.asarray(v_hat, dtype=np.float64), PROB_FLOOR, 1.0 - PROB_FLOOR)
    if v.shape != p.shape or v.shape != q.shape:
        raise InvalidArgumentError("v, v_hat and q must have the same shape")
    targets = q == 0.0
    bits = -(v * np.log2(p) + (1.0 - v) * np.log2(1.0 - p))
    return float(bits[targets].sum()), int(targets.sum())


def masked_ce_gaussian(
    v: np.ndarray, mean: np.ndarray, var: np.ndarray, q: np.ndarray
) -> Tuple[float, int]:
    """Gaussian negative log-density in bits over target positions."""
    v = np.asarray(v, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    targets = np.asarray(q, dtype=np.float64) == 0.0
    if np.any(var[targets] <= 0.0):
        raise NumericalDomainError("predictive variance must be positive on target positions")
    t_var = var[targets]
    nats = 0.5 * np.log(2.0 * np.pi * t_var) + (v[targets] - mean[targets]) ** 2 / (2.0 * t_var)
    return float(nats.sum() * LOG2E), int(targets.sum())


def ce_categorical(truth: np.ndarray, probs: np.ndarray) -> Tuple[float, int]:
    """Categorical cross-entropy in bits over every position; ``probs`` is [..., n_classes]."""
    truth = np.asarray(truth).astype(np.intp)
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape[:-1] != truth.shape:
        raise InvalidArgumentError(f"probabilities {probs.shape} do not match labels {truth.shape}")
    picked = np.take_along_axis(probs, truth[..., None], axis=-1)[..., 0]
    picked = np.clip(picked, PROB_FLOOR, 1.0)
    return float(-np.log2(picked).sum()), int(truth.size)


def nce(total_bits: float, n_predicted: int) -> float:
    """Average cross-entropy per predicted variable."""
    if n_predicted <= 0:
        raise InvalidArgumentError("no targets in query: NCE is undefined")
    return total_bits / n_predicted


def gaussian_baseline(train: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-pixel empirical mean and variance of the training data."""
    train = np.asarray(train, dtype=np.float64)
    if train.ndim != 2 or train.shape[0] < 2:
        raise InvalidArgumentError("the Gaussian baseline needs at least two training rows")
    mean = train.mean(axis=0)
    var = np.maximum(train.var(axis=0), PROB_FLOOR)
    return mean, var


def baseline_nce(
    data: np.ndarray,
    mean: np.ndarray,
    var: np.ndarray,
    masks: np.ndarray,
) -> float:
    """NCE of the independent-Gaussian reference on ``data`` under the given query masks."""
    data = np.asarray(data, dtype=np.float64)
    bits, count = masked_ce_gaussian(
        data, np.broadcast_to(mean, data.shape), np.broadcast_to(var, data.shape), masks
    )
    return nce(bits, count)


def uniform_nce(masks: np.ndarray, data: Optional[np.ndarray] = None) -> float:
    """NCE of the predictor that answers 0.5 everywhere; 1 bit whatever the data."""
    data = np.zeros_like(masks) if data is None else data
    bits, count = masked_ce_binary(data, np.full(masks.shape, 0.5), masks)
    return nce(bits, count)
