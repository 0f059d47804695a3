"""Adam with bias-corrected moment estimates over named parameter tensors."""
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from ..models.params import GradientBundle, ParamSet


@dataclass
class AdamState:
    """First and second moment estimates per tensor plus the step counter."""
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    state: AdamState,
    params: ParamSet,
    grads: GradientBundle,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> Tuple[ParamSet, AdamState]:
    """One Adam update; returns new parameters and state, the inputs are left untouched."""
    grads.check_congruent(params)
    t = state.t + 1
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t

    new_m: Dict[str, np.ndarray] = {}
    new_v: Dict[str, np.ndarray] = {}
    updates: Dict[str, np.ndarray] = {}
    for name in params.TRAINABLE:
        g = grads.tensors[name]
        value = getattr(params, name)
        m = state.m.get(name, np.zeros_like(value))
        v = state.v.get(name, np.zeros_like(value))
        new_m[name] = beta1 * m + (1.0 - beta1) * g
        new_v[name] = beta2 * v + (1.0 - beta2) * (g * g)
        denom = np.sqrt(new_v[name] / bc2) + eps
        updates[name] = value - (lr / bc1) * new_m[name] / denom

    return params.with_tensors(**updates), AdamState(m=new_m, v=new_v, t=t)


def sgd_step(params: ParamSet, grads: GradientBundle, lr: float) -> ParamSet:
    """Plain gradient step."""
    grads.check_congruent(params)
    return params.with_tensors(**{
        name: getattr(params, name) - lr * grads.tensors[name] for name in params.TRAINABLE
    })
