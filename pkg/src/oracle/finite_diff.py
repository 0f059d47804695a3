"""Central finite differences, the reference for every hand-written adjoint."""
from typing import Callable, Iterable, Optional

import numpy as np

from ..models.params import GradientBundle, ParamSet

DEFAULT_STEP = 1e-5

# Gradients smaller than this are compared absolutely.
RELATIVE_FLOOR = 1e-3


def numeric_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = DEFAULT_STEP) -> np.ndarray:
    """Central-difference gradient of a scalar function of an array."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        f_plus = f(x)
        flat[i] = saved - h
        f_minus = f(x)
        flat[i] = saved
        out[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def finite_diff_grad(
    loss: Callable[[ParamSet], float],
    params: ParamSet,
    h: float = DEFAULT_STEP,
    names: Optional[Iterable[str]] = None,
) -> GradientBundle:
    """Finite-difference gradient of ``loss`` wrt every trainable tensor (or ``names``)."""
    tensors = {}
    for name in names or params.TRAINABLE:
        def f(value: np.ndarray, name=name) -> float:
            return loss(params.with_tensors(**{name: value}))
        tensors[name] = numeric_gradient(f, getattr(params, name), h)
    return GradientBundle(params.KIND, tensors)


def max_relative_error(analytic: GradientBundle, numeric: GradientBundle) -> float:
    """max |a - n| / max(|a|, |n|, RELATIVE_FLOOR) over the tensors both bundles hold."""
    worst = 0.0
    for name, n in numeric.tensors.items():
        a = analytic.tensors[name]
        scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), RELATIVE_FLOOR)
        worst = max(worst, float(np.max(np.abs(a - n) / scale)))
    return worst
