"""
Clone-structured 8-connected grid MRF for contour/inside/outside segmentation.

Categorical BP runs in log space. ``messages[d]`` ([B, R, C, K]) holds, at every pixel,
the message received from its neighbour at ``pixel - offset`` of direction ``d``; positions whose
neighbour lies outside the grid are kept at zero and masked out of every sum. Messages
are log-normalised after every update.
"""
from dataclasses import dataclass, field
from typing import Iterable, List, Sequence, Tuple

import numpy as np
import structlog
from scipy.special import log_softmax, logsumexp, softmax

from ..errors import EstimationError, InvalidArgumentError
from ..models.params import GmrfParams, GradientBundle, Label, ModelKind
from .numerics import tempered_logsumexp

logger = structlog.get_logger()

POTENTIAL_INIT_STD = 0.1
NOISE_FLOOR = 1e-6

# (name, offset, table, transposed). Reverse direction of d is d ^ 1.
DIRECTIONS: Tuple[Tuple[str, Tuple[int, int], str, bool], ...] = (
    ("down", (1, 0), "pot_ud", False),
    ("up", (-1, 0), "pot_ud", True),
    ("right", (0, 1), "pot_lr", False),
    ("left", (0, -1), "pot_lr", True),
    ("down_right", (1, 1), "pot_d1", False),
    ("up_left", (-1, -1), "pot_d1", True),
    ("down_left", (1, -1), "pot_d2", False),
    ("up_right", (-1, 1), "pot_d2", True),
)
N_DIRECTIONS = len(DIRECTIONS)


def reverse(d: int) -> int:
    return d ^ 1


def _slices(n: int, delta: int) -> Tuple[slice, slice]:
    """(target, source) slices along one axis for a shift by ``delta``."""
    return slice(max(delta, 0), n + min(delta, 0)), slice(max(-delta, 0), n + min(-delta, 0))


def shift(x: np.ndarray, offset: Tuple[int, int]) -> np.ndarray:
    """y[:, r, c] = x[:, r - dr, c - dc], zero where the source is off-grid."""
    R, C = x.shape[1], x.shape[2]
    (tr, sr), (tc, sc) = _slices(R, offset[0]), _slices(C, offset[1])
    y = np.zeros_like(x)
    y[:, tr, tc] = x[:, sr, sc]
    return y


def unshift(g: np.ndarray, offset: Tuple[int, int]) -> np.ndarray:
    """Adjoint of ``shift``."""
    R, C = g.shape[1], g.shape[2]
    (tr, sr), (tc, sc) = _slices(R, offset[0]), _slices(C, offset[1])
    x = np.zeros_like(g)
    x[:, sr, sc] = g[:, tr, tc]
    return x


def valid_masks(R: int, C: int) -> np.ndarray:
    """[8, R, C] indicator of pixels that receive a message along each direction."""
    ones = np.ones((1, R, C))
    return np.stack([shift(ones, offset)[0] for _, offset, _, _ in DIRECTIONS])


def _table(params: GmrfParams, d: int) -> np.ndarray:
    _, _, name, transposed = DIRECTIONS[d]
    P = getattr(params, name)
    return P.T if transposed else P


@dataclass
class GridBeliefState:
    """Per-pixel unary log-vectors [B, R, C, K] and incoming messages [8, B, R, C, K]."""
    unary: np.ndarray
    messages: np.ndarray

    @property
    def totals(self) -> np.ndarray:
        return self.unary + self.messages.sum(axis=0)


@dataclass
class GridTrace:
    unary: np.ndarray
    temperature: float
    layers: List[np.ndarray] = field(default_factory=list)

    @property
    def n_layers(self) -> int:
        return len(self.layers) - 1


def state_groups(n_states: int) -> np.ndarray:
    """[3, K] boolean state masks indexed by label code."""
    groups = np.zeros((3, n_states), dtype=bool)
    groups[Label.OUT, n_states - 1] = True
    groups[Label.IN, n_states - 2] = True
    groups[Label.CONTOUR, : n_states - 2] = True
    return groups


def estimate_noise(pairs: Iterable[Tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """Maximum-likelihood emission probabilities (p_contour, p_in, p_out)."""
    lit = np.zeros(3)
    total = np.zeros(3)
    for image, labels in pairs:
        image = np.asarray(image)
        labels = np.asarray(labels)
        if image.shape != labels.shape:
            raise InvalidArgumentError(f"image shape {image.shape} does not match labels {labels.shape}")
        for code in (Label.OUT, Label.IN, Label.CONTOUR):
            where = labels == code
            total[code] += where.sum()
            lit[code] += image[where].sum()
    for code in (Label.CONTOUR, Label.IN, Label.OUT):
        if total[code] == 0:
            raise EstimationError(f"no {Label.NAMES[code]} pixels in the corpus")
    p = lit / total
    return np.array([p[Label.CONTOUR], p[Label.IN], p[Label.OUT]])


def gmrf_unary(image: np.ndarray, noise: Sequence[float], n_states: int) -> np.ndarray:
    """Log-likelihood of each pixel value under every state; clones share p_contour."""
    image = np.asarray(image, dtype=np.float64)
    p_contour, p_in, p_out = np.clip(np.asarray(noise, dtype=np.float64), NOISE_FLOOR, 1.0 - NOISE_FLOOR)
    p = np.full(n_states, p_contour)
    p[n_states - 2] = p_in
    p[n_states - 1] = p_out
    y = image[..., None]
    return y * np.log(p) + (1.0 - y) * np.log1p(-p)


def initial_state(unary: np.ndarray) -> GridBeliefState:
    """Uniform normalised messages on every valid position."""
    B, R, C, K = unary.shape
    masks = valid_masks(R, C)[:, None, :, :, None]
    messages = np.broadcast_to(masks * -np.log(K), (N_DIRECTIONS, B, R, C, K)).copy()
    return GridBeliefState(unary=unary, messages=messages)


def gmrf_layer(params: GmrfParams, state: GridBeliefState, temperature: float = 1.0) -> GridBeliefState:
    """One parallel sweep: every message computed from ``state`` only."""
    B, R, C, K = state.unary.shape
    if K != params.n_states or state.messages.shape != (N_DIRECTIONS, B, R, C, K):
        raise InvalidArgumentError("belief state does not match the model")
    total = state.totals
    new = np.empty_like(state.messages)
    for d, (_, offset, _, _) in enumerate(DIRECTIONS):
        cavity = total - state.messages[reverse(d)]
        out = tempered_logsumexp(cavity[..., :, None] + _table(params, d), temperature, axis=-2)
        new[d] = shift(log_softmax(out, axis=-1), offset)
    return GridBeliefState(unary=state.unary, messages=new)


def _batched_image(image: np.ndarray) -> Tuple[np.ndarray, bool]:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image[None], True
    if image.ndim != 3:
        raise InvalidArgumentError(f"expected an image or a batch of images, got shape {image.shape}")
    return image, False


def gmrf_forward(
    params: GmrfParams, image: np.ndarray, N: int, temperature: float = 1.0
) -> Tuple[np.ndarray, GridTrace]:
    """Per-pixel state beliefs [R, C, K] (or [B, R, C, K]) after N layers."""
    if N < 1:
        raise InvalidArgumentError(f"number of layers must be >= 1, got {N}")
    if temperature < 0:
        raise InvalidArgumentError("temperature must be >= 0")
    images, single = _batched_image(image)
    state = initial_state(gmrf_unary(images, params.noise, params.n_states))
    trace = GridTrace(unary=state.unary, temperature=temperature, layers=[state.messages])
    for _ in range(N):
        state = gmrf_layer(params, state, temperature)
        trace.layers.append(state.messages)
    beliefs = softmax(state.totals, axis=-1)
    logger.debug("Grid unroll finished", layers=N, batch=images.shape[0], grid=images.shape[1:])
    return (beliefs[0], trace) if single else (beliefs, trace)


def aggregate_labels(beliefs: np.ndarray) -> np.ndarray:
    """3-class probabilities indexed by label code: clones sum to CONTOUR."""
    beliefs = np.asarray(beliefs, dtype=np.float64)
    K = beliefs.shape[-1]
    out = np.empty(beliefs.shape[:-1] + (3,))
    out[..., Label.OUT] = beliefs[..., K - 1]
    out[..., Label.IN] = beliefs[..., K - 2]
    out[..., Label.CONTOUR] = beliefs[..., : K - 2].sum(axis=-1)
    return out


def decode_labels(probs3: np.ndarray) -> np.ndarray:
    return np.argmax(probs3, axis=-1)


def iou(pred: np.ndarray, truth: np.ndarray) -> float:
    """Foreground (IN or CONTOUR) intersection over union; 1 when both are empty."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise InvalidArgumentError(f"prediction shape {pred.shape} does not match truth {truth.shape}")
    fg_pred = pred != Label.OUT
    fg_truth = truth != Label.OUT
    union = np.logical_or(fg_pred, fg_truth).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(fg_pred, fg_truth).sum() / union)


def label_loss(totals: np.ndarray, labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-sample summed -log P(label) in nats and its gradient wrt the belief logits."""
    K = totals.shape[-1]
    member = state_groups(K)[labels.astype(np.intp)]
    masked = np.where(member, totals, -np.inf)
    nats = logsumexp(totals, axis=-1) - logsumexp(masked, axis=-1)
    grad = softmax(totals, axis=-1) - softmax(masked, axis=-1)
    return nats.reshape(nats.shape[0], -1).sum(axis=1), grad


def gmrf_backward(
    params: GmrfParams,
    labels: np.ndarray,
    trace: GridTrace,
    reduction: str = "mean",
) -> Tuple[float, GradientBundle]:
    """Exact gradient of the per-pixel label cross-entropy wrt the four potential tables."""
    labels = np.asarray(labels)
    if labels.ndim == 2:
        labels = labels[None]
    B, R, C, K = trace.unary.shape
    if labels.shape != (B, R, C) or K != params.n_states:
        raise InvalidArgumentError("trace does not match the labels or the model")
    T = trace.temperature
    if T <= 0.0:
        raise InvalidArgumentError("gradients need a positive temperature")
    masks = valid_masks(R, C)[:, None, :, :, None]

    final = trace.layers[-1]
    nats, g_total = label_loss(trace.unary + final.sum(axis=0), labels)
    g_msgs = masks * g_total[None]
    g_tables = {name: np.zeros((K, K)) for name in GmrfParams.TRAINABLE}

    for n in range(trace.n_layers, 0, -1):
        prev = trace.layers[n - 1]
        total = trace.unary + prev.sum(axis=0)
        g_prev = np.zeros_like(prev)
        g_total = np.zeros_like(total)
        for d, (_, offset, name, transposed) in enumerate(DIRECTIONS):
            P = _table(params, d)
            z = (total - prev[reverse(d)])[..., :, None] + P
            out = T * logsumexp(z / T, axis=-2)
            g_y = unshift(g_msgs[d], offset)
            g_out = g_y - softmax(out, axis=-1) * g_y.sum(axis=-1, keepdims=True)
            weighted = softmax(z / T, axis=-2) * g_out[..., None, :]
            g_P = weighted.sum(axis=(0, 1, 2))
            g_tables[name] += g_P.T if transposed else g_P
            g_cavity = weighted.sum(axis=-1)
            g_total += g_cavity
            g_prev[reverse(d)] -= g_cavity
        g_msgs = masks * (g_prev + g_total[None])

    grads = GradientBundle(ModelKind.GMRF, g_tables)
    loss = float(nats.sum())
    if reduction == "mean":
        return loss / B, grads.scaled(1.0 / B)
    return loss, grads


def init_gmrf_params(n_clones: int, noise: Sequence[float], rng: np.random.Generator) -> GmrfParams:
    """Gaussian(0, 0.1²) log-potentials; the noise breaks clone symmetry."""
    K = n_clones + 2
    tables = {name: rng.normal(0.0, POTENTIAL_INIT_STD, size=(K, K)) for name in GmrfParams.TRAINABLE}
    return GmrfParams(noise=np.asarray(noise, dtype=np.float64), **tables)
