"""
Unrolled belief propagation for the Gaussian RBM (binary hidden, continuous visible units).

Visible-to-hidden messages are logits; hidden-to-visible messages are Gaussians in natural
parameters (theta1, theta2) obtained by moment-matching the two-component belief at the
visible unit and dividing the cavity back out. No temperature is applied.

A hidden unit can only widen the visible belief, so every theta2 message is non-negative
and enough hidden units would push a total past zero. Inside the unrolled network each
theta2 message is therefore capped at a 1/H share of (1 - PROPER_MARGIN) times the unit's
unary precision, which keeps every cavity and every readout proper. The single-edge
``hidden_to_visible_message`` returns the raw quotient.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np
import structlog
from scipy.special import expit

from ..errors import InvalidArgumentError, NumericalDomainError
from ..models.params import GradientBundle, GrbmParams, ModelKind
from ..models.training import GrbmConfig

logger = structlog.get_logger()

WEIGHT_INIT_STD = 0.01
HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
# share of each unary precision no set of hidden messages can cancel
PROPER_MARGIN = 0.1


@dataclass
class GaussianMessages:
    """``M_HV`` [B, H, V] logits; ``M_VHt1``/``M_VHt2`` [B, V, H] natural parameters."""
    M_HV: np.ndarray
    M_VHt1: np.ndarray
    M_VHt2: np.ndarray

    @classmethod
    def initial(cls, batch: int, H: int, V: int) -> "GaussianMessages":
        return cls(np.zeros((batch, H, V)), np.zeros((batch, V, H)), np.full((batch, V, H), -0.5))


@dataclass
class GaussianTrace:
    """Natural-parameter unaries and every message state, ``layers[0]`` the initial one."""
    theta1: np.ndarray
    theta2: np.ndarray
    layers: List[GaussianMessages] = field(default_factory=list)

    @property
    def n_layers(self) -> int:
        return len(self.layers) - 1


def grbm_encode_unary(
    v: np.ndarray, q: np.ndarray, b: np.ndarray, epsilon: float
) -> Tuple[np.ndarray, np.ndarray]:
    """Unary terms: observed units get (v, -1/(2 epsilon)), the rest (b, -1/2)."""
    v = np.asarray(v, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if v.shape != q.shape or v.shape[-1] != b.shape[-1]:
        raise InvalidArgumentError(f"shapes v {v.shape}, q {q.shape}, b {b.shape} do not agree")
    if not np.all(np.isfinite(v)):
        raise InvalidArgumentError("v must be finite")
    if not np.all((q == 0.0) | (q == 1.0)):
        raise InvalidArgumentError("query mask entries must be 0 or 1")
    if epsilon <= 0:
        raise InvalidArgumentError("epsilon must be positive")
    u_t1 = v * q + b * (1.0 - q)
    u_t2 = np.where(q == 1.0, -1.0 / (2.0 * epsilon), -0.5)
    return u_t1, u_t2


def _check_cavity(t2: np.ndarray) -> None:
    if np.any(t2 >= 0.0):
        raise NumericalDomainError("improper Gaussian cavity: second natural parameter is not negative")


def _v2h(w, t1, t2):
    return -(2.0 * t1 * w + w * w) / (4.0 * t2)


def visible_to_hidden_message(w, t1, t2):
    """Logit message w·mu + sigma²w²/2 from a Gaussian cavity (t1, t2) across weight ``w``."""
    t2 = np.asarray(t2, dtype=np.float64)
    _check_cavity(t2)
    out = _v2h(np.asarray(w, dtype=np.float64), np.asarray(t1, dtype=np.float64), t2)
    return float(out) if np.ndim(out) == 0 else out


def _belief_moments(w, x, t1, t2) -> Dict[str, np.ndarray]:
    mu = -t1 / (2.0 * t2)
    s = -1.0 / (2.0 * t2)
    r = expit(x + w * mu + 0.5 * s * w * w)
    mu1 = mu + s * w
    mu_b = mu + r * s * w
    # E[v^2] - mu_b^2 without the cancellation at large mu
    var_b = s + r * (1.0 - r) * (s * w) ** 2
    return {"mu": mu, "s": s, "r": r, "mu1": mu1, "mu_b": mu_b, "var_b": var_b}


def _belief(w, x, t1, t2):
    m = _belief_moments(w, x, t1, t2)
    if np.any(m["var_b"] <= 0.0):
        raise NumericalDomainError("moment-matched belief variance is not positive")
    return m["mu_b"] / m["var_b"], -1.0 / (2.0 * m["var_b"]), m


def gaussian_belief_approx(w, x, t1, t2):
    """Gaussian (b1, b2) matching the first two moments of the visible belief.

    ``x`` is the hidden unit's cavity logit; the belief mixes the cavity Gaussian with
    its tilt by ``w`` using responsibility sigmoid(x + w·mu + sigma²w²/2).
    """
    args = [np.asarray(a, dtype=np.float64) for a in (w, x, t1, t2)]
    _check_cavity(args[3])
    b1, b2, _ = _belief(*args)
    if np.ndim(b1) == 0:
        return float(b1), float(b2)
    return b1, b2


def hidden_to_visible_message(w, x, t1, t2):
    """Belief divided by the cavity: (b1 - t1, b2 - t2)."""
    b1, b2 = gaussian_belief_approx(w, x, t1, t2)
    return b1 - np.asarray(t1), b2 - np.asarray(t2)


def _natural_unary(u_t1: np.ndarray, u_t2: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    # mean form -> natural form; identical to the mean on unit-variance prior units
    return u_t1 * (-2.0 * u_t2), u_t2


def _visible_cavity(theta: np.ndarray, M: np.ndarray) -> np.ndarray:
    # [B, H, V]
    return (theta + M.sum(axis=2))[:, None, :] - M.transpose(0, 2, 1)


def _hidden_cavity(c: np.ndarray, M_HV: np.ndarray) -> np.ndarray:
    return (c + M_HV.sum(axis=2))[:, :, None] - M_HV


def _theta2_cap(theta2: np.ndarray, H: int) -> np.ndarray:
    # [B, 1, V]; the capped messages sum to at most -(1 - PROPER_MARGIN) theta2
    return (-(1.0 - PROPER_MARGIN) / H * theta2)[:, None, :]


def grbm_layer(params: GrbmParams, theta1: np.ndarray, theta2: np.ndarray, prev: GaussianMessages) -> GaussianMessages:
    """One parallel sweep from ``prev``."""
    W = params.W[None, :, :]
    t1 = _visible_cavity(theta1, prev.M_VHt1)
    t2 = _visible_cavity(theta2, prev.M_VHt2)
    _check_cavity(t2)
    x = _hidden_cavity(params.c, prev.M_HV)
    b1, b2, _ = _belief(W, x, t1, t2)
    m2 = np.minimum(b2 - t2, _theta2_cap(theta2, W.shape[1]))
    return GaussianMessages(
        M_HV=_v2h(W, t1, t2),
        M_VHt1=np.ascontiguousarray((b1 - t1).transpose(0, 2, 1)),
        M_VHt2=np.ascontiguousarray(m2.transpose(0, 2, 1)),
    )


def grbm_readout(
    params: GrbmParams, theta1: np.ndarray, theta2: np.ndarray, msgs: GaussianMessages
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Posterior (mean, var) per visible unit and hidden marginals."""
    hat1 = theta1 + msgs.M_VHt1.sum(axis=2)
    hat2 = theta2 + msgs.M_VHt2.sum(axis=2)
    bad = np.argwhere(hat2 >= 0.0)
    if bad.size:
        raise NumericalDomainError(
            f"improper posterior at visible unit {int(bad[0][-1])}: theta2 = {hat2[tuple(bad[0])]}"
        )
    mean = -hat1 / (2.0 * hat2)
    var = -1.0 / (2.0 * hat2)
    h_hat = expit(params.c + msgs.M_HV.sum(axis=2))
    return mean, var, h_hat


def grbm_forward(
    params: GrbmParams, v: np.ndarray, q: np.ndarray, cfg: GrbmConfig
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, GaussianTrace]:
    """Predictive mean and variance of every visible unit given the observed ones."""
    v = np.asarray(v, dtype=np.float64)
    single = v.ndim == 1
    v2 = np.atleast_2d(v)
    q2 = np.atleast_2d(np.asarray(q, dtype=np.float64))
    H, V = params.W.shape
    if v2.ndim != 2 or v2.shape[1] != V:
        raise InvalidArgumentError(f"v has shape {v.shape}, model has {V} visible units")
    theta1, theta2 = _natural_unary(*grbm_encode_unary(v2, q2, params.b, cfg.epsilon))
    trace = GaussianTrace(theta1, theta2, [GaussianMessages.initial(v2.shape[0], H, V)])
    for _ in range(cfg.N):
        trace.layers.append(grbm_layer(params, theta1, theta2, trace.layers[-1]))
    mean, var, h_hat = grbm_readout(params, theta1, theta2, trace.layers[-1])
    logger.debug("Gaussian unroll finished", layers=cfg.N, batch=v2.shape[0])
    if single:
        return mean[0], var[0], h_hat[0], trace
    return mean, var, h_hat, trace


def gaussian_nll(v: np.ndarray, mean: np.ndarray, var: np.ndarray) -> np.ndarray:
    """Elementwise -log N(v; mean, var) in nats."""
    return HALF_LOG_2PI + 0.5 * np.log(var) + (v - mean) ** 2 / (2.0 * var)


def _belief_backward(w, x, t1, t2, m, g_b1, g_b2):
    """Adjoint of (b1, b2) wrt (w, x, t1, t2), given the forward moments ``m``."""
    mu, s, r, mu1, mu_b, var_b = (m[k] for k in ("mu", "s", "r", "mu1", "mu_b", "var_b"))
    g_mu_b = g_b1 / var_b
    g_var = -g_b1 * mu_b / var_b ** 2 + g_b2 / (2.0 * var_b ** 2)
    g_e2 = g_var
    g_mu_b = g_mu_b - 2.0 * mu_b * g_var

    g_mu = g_mu_b + g_e2 * 2.0 * mu * (1.0 - r)
    g_s = g_mu_b * r * w + g_e2
    g_w = g_mu_b * r * s
    g_r = g_mu_b * s * w + g_e2 * (mu1 * mu1 - mu * mu)
    g_mu1 = g_e2 * 2.0 * r * mu1

    g_mu = g_mu + g_mu1
    g_s = g_s + g_mu1 * w
    g_w = g_w + g_mu1 * s

    g_a = g_r * r * (1.0 - r)
    g_x = g_a
    g_w = g_w + g_a * (mu + s * w)
    g_mu = g_mu + g_a * w
    g_s = g_s + g_a * 0.5 * w * w

    g_t1 = -g_mu / (2.0 * t2)
    g_t2 = (g_mu * t1 + g_s) / (2.0 * t2 * t2)
    return g_w, g_x, g_t1, g_t2


def grbm_backward(
    params: GrbmParams,
    v: np.ndarray,
    q: np.ndarray,
    trace: GaussianTrace,
    reduction: str = "mean",
) -> Tuple[float, GradientBundle]:
    """Exact gradient of the masked Gaussian NLL wrt W, b and c."""
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    H, V = params.W.shape
    B = v.shape[0]
    if trace.theta1.shape != (B, V) or trace.layers[0].M_HV.shape != (B, H, V):
        raise InvalidArgumentError("trace does not match the parameters or the batch")
    W = params.W[None, :, :]
    theta1, theta2 = trace.theta1, trace.theta2
    targets = 1.0 - q

    mean, var, _ = grbm_readout(params, theta1, theta2, trace.layers[-1])
    nats = (gaussian_nll(v, mean, var) * targets).sum(axis=1)

    g_hat1 = (mean - v) * targets
    g_hat2 = (mean * mean + var - v * v) * targets
    g_theta1 = g_hat1.copy()
    g_W = np.zeros_like(params.W)
    g_c = np.zeros_like(params.c)
    g_M1 = np.broadcast_to(g_hat1[:, :, None], (B, V, H))
    g_M2 = np.broadcast_to(g_hat2[:, :, None], (B, V, H))
    g_MHV = np.zeros((B, H, V))

    for n in range(trace.n_layers, 0, -1):
        prev = trace.layers[n - 1]
        t1 = _visible_cavity(theta1, prev.M_VHt1)
        t2 = _visible_cavity(theta2, prev.M_VHt2)
        x = _hidden_cavity(params.c, prev.M_HV)
        _, b2, moments = _belief(W, x, t1, t2)

        # hidden-to-visible: (b1 - t1, min(b2 - t2, cap)); the cap is constant in the parameters
        g_m1 = g_M1.transpose(0, 2, 1)
        g_m2 = g_M2.transpose(0, 2, 1) * ((b2 - t2) < _theta2_cap(theta2, H))
        g_w, g_x, g_t1, g_t2 = _belief_backward(W, x, t1, t2, moments, g_m1, g_m2)
        g_t1 = g_t1 - g_m1
        g_t2 = g_t2 - g_m2

        # visible-to-hidden: -(2 t1 w + w²) / (4 t2)
        g_t1 = g_t1 + g_MHV * (-W / (2.0 * t2))
        g_t2 = g_t2 + g_MHV * (2.0 * t1 * W + W * W) / (4.0 * t2 * t2)
        g_w = g_w + g_MHV * (-(t1 + W) / (2.0 * t2))
        g_W += g_w.sum(axis=0)

        g_T1 = g_t1.sum(axis=1)
        g_T2 = g_t2.sum(axis=1)
        g_theta1 += g_T1
        g_M1 = g_T1[:, :, None] - g_t1.transpose(0, 2, 1)
        g_M2 = g_T2[:, :, None] - g_t2.transpose(0, 2, 1)

        g_base_h = g_x.sum(axis=2)
        g_c += g_base_h.sum(axis=0)
        g_MHV = g_base_h[:, :, None] - g_x

    # prior units carry theta1 = b
    g_b = (g_theta1 * targets).sum(axis=0)
    grads = GradientBundle(ModelKind.GRBM, {"W": g_W, "b": g_b, "c": g_c})
    loss = float(nats.sum())
    if reduction == "mean":
        return loss / B, grads.scaled(1.0 / B)
    return loss, grads


def init_grbm_params(V: int, H: int, rng: np.random.Generator) -> GrbmParams:
    """Small Gaussian weights, zero means and hidden biases."""
    return GrbmParams(W=rng.normal(0.0, WEIGHT_INIT_STD, size=(H, V)), b=np.zeros(V), c=np.zeros(H))
