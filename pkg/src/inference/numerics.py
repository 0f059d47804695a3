"""
Numerically robust scalar kernels shared by every unrolled network.

All functions accept numpy arrays (applied elementwise) as well as Python floats and
work in float64. A temperature of 0 selects the max-product limit through an explicit
branch; nothing is ever divided by a zero temperature.
"""
from typing import Tuple, Union

import numpy as np
from scipy.special import expit, logsumexp

from ..errors import InvalidArgumentError

ArrayLike = Union[float, np.ndarray]

# Unary logits for hard evidence are clipped to this magnitude.
LOGIT_CLIP = 1000.0

# Lower bound added to the softplus temperature reparameterisation.
MIN_TEMPERATURE = 1e-3


def _check_finite(name: str, value: ArrayLike) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} must be finite")
    return arr


def _check_temperature(T: float) -> float:
    T = float(T)
    if not np.isfinite(T) or T < 0:
        raise InvalidArgumentError(f"temperature must be a finite value >= 0, got {T}")
    return T


def _unwrap(result: np.ndarray) -> ArrayLike:
    return float(result) if np.ndim(result) == 0 else result


def softplus_t(x: np.ndarray, T: float) -> np.ndarray:
    """Unchecked tempered softplus used inside the unrolled layers."""
    if T == 0.0:
        return np.maximum(x, 0.0)
    return T * np.logaddexp(0.0, x / T)


def tempered_softplus(x: ArrayLike, T: float) -> ArrayLike:
    """T·log(1 + e^{x/T}); max(x, 0) at T = 0."""
    x = _check_finite("x", x)
    T = _check_temperature(T)
    return _unwrap(softplus_t(x, T))


def transfer_t(w: np.ndarray, x: np.ndarray, T: float) -> np.ndarray:
    """Unchecked binary pairwise transfer function."""
    abs_w = np.abs(w)
    max_product = np.sign(w) * np.clip(x, -abs_w, abs_w)
    if T == 0.0:
        return max_product
    return max_product + (softplus_t(-np.abs(x + w), T) - softplus_t(-np.abs(x - w), T))


def binary_transfer(w: ArrayLike, x: ArrayLike, T: float) -> ArrayLike:
    """Logit-space message through a binary pairwise factor of weight ``w``.

    Equals log(1+e^{x+w}) - log(1+e^{x-w}) - w at T = 1, evaluated as the
    max-product clip plus two non-positive softplus corrections.
    """
    w = _check_finite("w", w)
    x = _check_finite("x", x)
    T = _check_temperature(T)
    return _unwrap(transfer_t(w, x, T))


def _softplus_temperature_slope(a: np.ndarray, T: float) -> np.ndarray:
    # d/dT of T*log(1+e^{a/T}) = softplus(-|z|) + |z|*sigmoid(-|z|), z = a/T
    z = np.abs(a / T)
    return np.logaddexp(0.0, -z) + z * expit(-z)


def transfer_grads_t(w: np.ndarray, x: np.ndarray, T: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unchecked partial derivatives (df/dw, df/dx, df/dT) of the transfer function, T > 0."""
    s_plus = expit((x + w) / T)
    s_minus = expit((x - w) / T)
    df_dx = s_plus - s_minus
    df_dw = s_plus - expit((w - x) / T)
    df_dT = _softplus_temperature_slope(x + w, T) - _softplus_temperature_slope(x - w, T)
    return df_dw, df_dx, df_dT


def binary_transfer_grads(w: ArrayLike, x: ArrayLike, T: float) -> Tuple[ArrayLike, ArrayLike, ArrayLike]:
    """Partial derivatives of ``binary_transfer`` for a positive temperature."""
    w = _check_finite("w", w)
    x = _check_finite("x", x)
    T = _check_temperature(T)
    if T == 0.0:
        raise InvalidArgumentError("transfer gradients need a positive temperature")
    return tuple(_unwrap(g) for g in transfer_grads_t(w, x, T))


def sigmoid(x: ArrayLike) -> ArrayLike:
    x = _check_finite("x", x)
    return _unwrap(expit(x))


def logit(p: ArrayLike) -> ArrayLike:
    """Inverse sigmoid, saturating to ±LOGIT_CLIP at 0 and 1."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(np.isnan(p)) or np.any(p < 0.0) or np.any(p > 1.0):
        raise InvalidArgumentError("logit needs probabilities in [0, 1]")
    with np.errstate(divide="ignore"):
        out = np.log(p) - np.log1p(-p)
    return _unwrap(np.clip(out, -LOGIT_CLIP, LOGIT_CLIP))


def log_normalize(v: ArrayLike, axis: int = -1) -> np.ndarray:
    """Shift log-values so their exponentials sum to one along ``axis``."""
    v = _check_finite("v", v)
    if v.ndim == 0 or v.shape[axis] == 0:
        raise InvalidArgumentError("log_normalize needs a non-empty vector")
    return v - logsumexp(v, axis=axis, keepdims=True)


def tempered_logsumexp(x: np.ndarray, T: float, axis: int = -1) -> np.ndarray:
    """T·logsumexp(x/T) along ``axis``; max at T = 0."""
    if T == 0.0:
        return np.max(x, axis=axis)
    return T * logsumexp(x / T, axis=axis)


def temperature_from_tau(tau: ArrayLike) -> float:
    """Strictly positive temperature from an unconstrained parameter."""
    return float(softplus_t(np.asarray(tau, dtype=np.float64), 1.0) + MIN_TEMPERATURE)


def temperature_slope(tau: ArrayLike) -> float:
    """dT/dtau of ``temperature_from_tau``."""
    return float(expit(np.asarray(tau, dtype=np.float64)))


def tau_for_temperature(T: float) -> float:
    """Inverse of ``temperature_from_tau``."""
    if T <= MIN_TEMPERATURE:
        raise InvalidArgumentError(f"temperature must exceed {MIN_TEMPERATURE}")
    y = T - MIN_TEMPERATURE
    # log(e^y - 1), stable for large y
    return float(y + np.log(-np.expm1(-y)))
