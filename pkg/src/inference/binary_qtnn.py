"""
Unrolled parallel belief propagation for the binary RBM and the two-layer DBM.

Messages live in logit space. Hidden-side quantities are laid out ``[B, H, V]``; the
hidden-to-visible messages keep their natural ``[B, V, H]`` layout. Every layer reads
the previous message state only (fully parallel schedule) and shares the parameters of
all other layers.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import structlog
from scipy.special import expit

from ..errors import InvalidArgumentError
from ..models.params import DbmParams, GradientBundle, ModelKind, RbmParams
from .numerics import (
    LOGIT_CLIP,
    logit,
    tau_for_temperature,
    temperature_from_tau,
    temperature_slope,
    transfer_grads_t,
    transfer_t,
)

logger = structlog.get_logger()

WEIGHT_INIT_STD = 0.01


@dataclass
class BinaryMessages:
    """Logit-space messages: ``M_HV`` [B, H, V] to hidden units, ``M_VH`` [B, V, H] to visible units."""
    M_HV: np.ndarray
    M_VH: np.ndarray

    @classmethod
    def zeros(cls, batch: int, H: int, V: int) -> "BinaryMessages":
        return cls(np.zeros((batch, H, V)), np.zeros((batch, V, H)))


@dataclass
class LayerTrace:
    """Message states of every layer (``layers[0]`` is all zeros) plus the unary input."""
    unary: np.ndarray
    temperature: float
    layers: List[BinaryMessages] = field(default_factory=list)

    @property
    def n_layers(self) -> int:
        return len(self.layers) - 1


def _batched(a: np.ndarray) -> Tuple[np.ndarray, bool]:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        return a[None, :], True
    if a.ndim != 2:
        raise InvalidArgumentError(f"expected a vector or a batch of vectors, got shape {a.shape}")
    return a, False


def _check_mask(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if not np.all((q == 0.0) | (q == 1.0)):
        raise InvalidArgumentError("query mask entries must be 0 or 1")
    return q


def to_spin(x01: np.ndarray) -> np.ndarray:
    """Map {0, 1} data to the ±1 variables of the message derivation."""
    return 2.0 * np.asarray(x01, dtype=np.float64) - 1.0


def encode_unary(x: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Hard-evidence unary logits: ±LOGIT_CLIP for evidence, 0 for targets."""
    x = np.asarray(x, dtype=np.float64)
    q = _check_mask(q)
    if x.shape != q.shape:
        raise InvalidArgumentError(f"x shape {x.shape} does not match mask shape {q.shape}")
    if not np.all((x == 1.0) | (x == -1.0)):
        raise InvalidArgumentError("x entries must be -1 or +1")
    return LOGIT_CLIP * x * q


def encode_soft_unary(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Soft-evidence unary logits from per-variable probabilities of being 1."""
    q = _check_mask(q)
    return np.asarray(logit(p), dtype=np.float64) * q


def resolve_temperature(tau: np.ndarray, temperature: Optional[float]) -> float:
    if temperature is not None:
        if temperature < 0:
            raise InvalidArgumentError("temperature must be >= 0")
        return float(temperature)
    return temperature_from_tau(tau)


def _visible_cavity(u: np.ndarray, c_V: np.ndarray, M_VH: np.ndarray) -> np.ndarray:
    # [B, H, V]: u_j + c_j + sum_k M_VH[j, k] - M_VH[j, i]
    base = u + c_V + M_VH.sum(axis=2)
    return base[:, None, :] - M_VH.transpose(0, 2, 1)


def _hidden_cavity(c_H: np.ndarray, M_HV: np.ndarray) -> np.ndarray:
    # [B, H, V]: c_i + sum_k M_HV[i, k] - M_HV[i, j]
    base = c_H + M_HV.sum(axis=2)
    return base[:, :, None] - M_HV


def rbm_layer(
    params: RbmParams,
    u_V: np.ndarray,
    prev: BinaryMessages,
    temperature: Optional[float] = None,
) -> BinaryMessages:
    """One parallel BP sweep computed from ``prev`` only."""
    u_V, _ = _batched(u_V)
    H, V = params.W.shape
    B = u_V.shape[0]
    if u_V.shape[1] != V or prev.M_HV.shape != (B, H, V) or prev.M_VH.shape != (B, V, H):
        raise InvalidArgumentError(
            f"message/unary shapes {prev.M_HV.shape}, {prev.M_VH.shape}, {u_V.shape} do not match W {params.W.shape}"
        )
    T = resolve_temperature(params.tau, temperature)
    W = params.W[None, :, :]
    M_HV = transfer_t(W, _visible_cavity(u_V, params.c_V, prev.M_VH), T)
    M_VH = transfer_t(W, _hidden_cavity(params.c_H, prev.M_HV), T).transpose(0, 2, 1)
    return BinaryMessages(M_HV, np.ascontiguousarray(M_VH))


def rbm_readout(params: RbmParams, u_V: np.ndarray, msgs: BinaryMessages) -> Tuple[np.ndarray, np.ndarray]:
    """Belief logits for visible [B, V] and hidden [B, H] units."""
    z_v = u_V + params.c_V + msgs.M_VH.sum(axis=2)
    z_h = params.c_H + msgs.M_HV.sum(axis=2)
    return z_v, z_h


def rbm_unroll(
    params: RbmParams,
    u_V: np.ndarray,
    N: int,
    temperature: Optional[float] = None,
) -> Tuple[np.ndarray, np.ndarray, LayerTrace]:
    """Run N layers from zero messages on precomputed unary logits ``u_V`` [B, V]."""
    if N < 1:
        raise InvalidArgumentError(f"number of layers must be >= 1, got {N}")
    H, V = params.W.shape
    T = resolve_temperature(params.tau, temperature)
    trace = LayerTrace(unary=u_V, temperature=T, layers=[BinaryMessages.zeros(u_V.shape[0], H, V)])
    for _ in range(N):
        trace.layers.append(rbm_layer(params, u_V, trace.layers[-1], temperature=T))
    z_v, z_h = rbm_readout(params, u_V, trace.layers[-1])
    logger.debug("Binary unroll finished", layers=N, batch=u_V.shape[0], temperature=T)
    return expit(z_v), expit(z_h), trace


def rbm_forward(
    params: RbmParams,
    x: np.ndarray,
    q: np.ndarray,
    N: int,
    temperature: Optional[float] = None,
) -> Tuple[np.ndarray, np.ndarray, LayerTrace]:
    """Marginals of every visible and hidden unit given ±1 evidence ``x`` under mask ``q``.

    ``x`` and ``q`` are [V] or [B, V]; outputs follow the same batching.
    """
    x, single = _batched(x)
    q, _ = _batched(q)
    if x.shape[1] != params.n_visible:
        raise InvalidArgumentError(f"x has {x.shape[1]} variables, model has {params.n_visible}")
    u = encode_unary(x, q)
    v_hat, h_hat, trace = rbm_unroll(params, u, N, temperature)
    if single:
        return v_hat[0], h_hat[0], trace
    return v_hat, h_hat, trace


def rbm_forward_soft(
    params: RbmParams,
    p: np.ndarray,
    q: np.ndarray,
    N: int,
    temperature: Optional[float] = None,
) -> Tuple[np.ndarray, np.ndarray, LayerTrace]:
    """Like ``rbm_forward`` with evidence given as probabilities of being 1.

    Evidence units enter through logit(p) instead of a saturated unary; p in {0, 1}
    reproduces hard evidence.
    """
    p, single = _batched(p)
    q, _ = _batched(q)
    if p.shape[1] != params.n_visible or p.shape != q.shape:
        raise InvalidArgumentError(f"evidence {p.shape} and mask {q.shape} do not fit {params.n_visible} variables")
    v_hat, h_hat, trace = rbm_unroll(params, encode_soft_unary(p, q), N, temperature)
    if single:
        return v_hat[0], h_hat[0], trace
    return v_hat, h_hat, trace


def masked_logit_loss(v01: np.ndarray, z: np.ndarray, q: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-sample summed binary CE in nats over targets, and its gradient wrt the logits."""
    targets = 1.0 - q
    nats = (np.logaddexp(0.0, z) - v01 * z) * targets
    return nats.sum(axis=1), (expit(z) - v01) * targets


def rbm_backward(
    params: RbmParams,
    x: np.ndarray,
    q: np.ndarray,
    trace: LayerTrace,
    temperature: Optional[float] = None,
    reduction: str = "mean",
) -> Tuple[float, GradientBundle]:
    """Exact gradient of the masked CE wrt W, c_V, c_H and tau by reverse accumulation.

    ``x``/``q`` must be the ±1 evidence and mask given to the matching forward pass.
    """
    x, _ = _batched(x)
    q, _ = _batched(q)
    H, V = params.W.shape
    if trace.unary.shape != x.shape or trace.layers[0].M_HV.shape[1:] != (H, V):
        raise InvalidArgumentError("trace does not match the parameters or the batch")
    T = trace.temperature
    if T <= 0.0:
        raise InvalidArgumentError("gradients need a positive temperature")
    u = trace.unary
    W = params.W[None, :, :]

    z_v, _ = rbm_readout(params, u, trace.layers[-1])
    nats, g_z = masked_logit_loss((x + 1.0) / 2.0, z_v, q)

    g_W = np.zeros_like(params.W)
    g_cV = g_z.sum(axis=0)
    g_cH = np.zeros_like(params.c_H)
    g_T = 0.0
    g_M_VH = np.broadcast_to(g_z[:, :, None], (x.shape[0], V, H))
    g_M_HV = np.zeros((x.shape[0], H, V))

    for n in range(trace.n_layers, 0, -1):
        prev = trace.layers[n - 1]
        dw_v, dx_v, dT_v = transfer_grads_t(W, _visible_cavity(u, params.c_V, prev.M_VH), T)
        dw_h, dx_h, dT_h = transfer_grads_t(W, _hidden_cavity(params.c_H, prev.M_HV), T)
        g_A = g_M_HV
        g_Bt = g_M_VH.transpose(0, 2, 1)

        g_W += (g_A * dw_v + g_Bt * dw_h).sum(axis=0)
        g_T += float((g_A * dT_v + g_Bt * dT_h).sum())

        g_Xv = g_A * dx_v
        g_Xh = g_Bt * dx_h
        g_base_v = g_Xv.sum(axis=1)
        g_base_h = g_Xh.sum(axis=2)
        g_cV += g_base_v.sum(axis=0)
        g_cH += g_base_h.sum(axis=0)
        g_M_VH = g_base_v[:, :, None] - g_Xv.transpose(0, 2, 1)
        g_M_HV = g_base_h[:, :, None] - g_Xh

    g_tau = g_T * temperature_slope(params.tau) if temperature is None else 0.0
    grads = GradientBundle(ModelKind.RBM, {
        "W": g_W, "c_V": g_cV, "c_H": g_cH, "tau": np.asarray(g_tau, dtype=np.float64),
    })
    loss = float(nats.sum())
    if reduction == "mean":
        scale = 1.0 / x.shape[0]
        return loss * scale, grads.scaled(scale)
    return loss, grads


def init_rbm_params(V: int, H: int, rng: np.random.Generator) -> RbmParams:
    """Small Gaussian weights, zero biases, temperature 1."""
    return RbmParams(
        W=rng.normal(0.0, WEIGHT_INIT_STD, size=(H, V)),
        c_V=np.zeros(V),
        c_H=np.zeros(H),
        tau=np.asarray(tau_for_temperature(1.0)),
    )


@dataclass
class DbmView:
    """A DBM seen as an RBM whose visible layer is [v ; h2] and hidden layer is h1."""
    rbm: RbmParams
    n_visible: int
    n_hidden2: int

    def extend_query(self, q: np.ndarray) -> np.ndarray:
        """q~ = [q ; 1_{H2}]: the second hidden layer is never a target."""
        q, _ = _batched(q)
        return np.concatenate([q, np.ones((q.shape[0], self.n_hidden2))], axis=1)

    def extend_unary(self, u_V: np.ndarray) -> np.ndarray:
        """Append logit(0.5) = 0 unaries for the second hidden layer."""
        return np.concatenate([u_V, np.zeros((u_V.shape[0], self.n_hidden2))], axis=1)

    def split_gradient(self, grads: GradientBundle) -> GradientBundle:
        """Map gradients of the stacked RBM back onto the DBM tensors."""
        V = self.n_visible
        g = grads.tensors
        return GradientBundle(ModelKind.DBM, {
            "W_H1V": g["W"][:, :V],
            "W_H2H1": g["W"][:, V:].T,
            "c_V": g["c_V"][:V],
            "c_H1": g["c_H"],
            "c_H2": g["c_V"][V:],
            "tau": g["tau"],
        })


def dbm_to_rbm(params: DbmParams) -> DbmView:
    """Stack W~ = [W_H1V | W_H2H1^T] ([H1 x (V+H2)]), c~_V = [c_V ; c_H2], c~_H = c_H1."""
    V, _, H2 = params.dims
    stacked = RbmParams(
        W=np.concatenate([params.W_H1V, params.W_H2H1.T], axis=1),
        c_V=np.concatenate([params.c_V, params.c_H2]),
        c_H=params.c_H1,
        tau=params.tau,
    )
    return DbmView(rbm=stacked, n_visible=V, n_hidden2=H2)


def dbm_forward(
    params: DbmParams,
    x: np.ndarray,
    q: np.ndarray,
    N: int,
    temperature: Optional[float] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, LayerTrace]:
    """Marginals (v_hat, h1_hat, h2_hat) via the stacked-RBM reduction."""
    x, single = _batched(x)
    q, _ = _batched(q)
    view = dbm_to_rbm(params)
    if x.shape[1] != view.n_visible:
        raise InvalidArgumentError(f"x has {x.shape[1]} variables, model has {view.n_visible}")
    u = view.extend_unary(encode_unary(x, q))
    ext_hat, h1_hat, trace = rbm_unroll(view.rbm, u, N, temperature)
    v_hat, h2_hat = ext_hat[:, :view.n_visible], ext_hat[:, view.n_visible:]
    if single:
        return v_hat[0], h1_hat[0], h2_hat[0], trace
    return v_hat, h1_hat, h2_hat, trace


def dbm_backward(
    params: DbmParams,
    x: np.ndarray,
    q: np.ndarray,
    trace: LayerTrace,
    temperature: Optional[float] = None,
    reduction: str = "mean",
) -> Tuple[float, GradientBundle]:
    """Gradient of the masked CE wrt every DBM tensor."""
    x, _ = _batched(x)
    view = dbm_to_rbm(params)
    x_ext = np.concatenate([x, np.ones((x.shape[0], view.n_hidden2))], axis=1)
    loss, grads = rbm_backward(view.rbm, x_ext, view.extend_query(q), trace, temperature, reduction)
    return loss, view.split_gradient(grads)


def init_dbm_params(V: int, H1: int, H2: int, rng: np.random.Generator) -> DbmParams:
    return DbmParams(
        W_H1V=rng.normal(0.0, WEIGHT_INIT_STD, size=(H1, V)),
        W_H2H1=rng.normal(0.0, WEIGHT_INIT_STD, size=(H2, H1)),
        c_V=np.zeros(V),
        c_H1=np.zeros(H1),
        c_H2=np.zeros(H2),
        tau=np.asarray(tau_for_temperature(1.0)),
    )
