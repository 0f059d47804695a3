"""
Gradient dispatch and the order-fixed minibatch reduction.

A minibatch is cut into contiguous chunks of at most ``CHUNK_SIZE`` samples. Chunks are
evaluated in a thread pool (numpy releases the GIL inside its kernels) and their sums are
added in chunk order, so results do not depend on the number of workers.
"""
from concurrent.futures import ThreadPoolExecutor
from typing import Any, List, Optional, Tuple, Union

import numpy as np

from ..errors import InvalidArgumentError
from ..inference.binary_qtnn import LayerTrace, dbm_backward, rbm_backward, to_spin
from ..inference.gaussian_qtnn import GaussianTrace, grbm_backward
from ..inference.grid_mrf import GridTrace, gmrf_backward
from ..models.params import DbmParams, GmrfParams, GradientBundle, GrbmParams, ParamSet, RbmParams
from .models import ModelAdapter

CHUNK_SIZE = 64
LOG2E = 1.0 / np.log(2.0)

Trace = Union[LayerTrace, GaussianTrace, GridTrace]


def backward(
    params: ParamSet,
    data: Any,
    masks: Optional[np.ndarray],
    trace: Trace,
    temperature: Optional[float] = None,
) -> Tuple[float, GradientBundle]:
    """Mean masked CE in bits and its exact gradient (per nat) for any model kind.

    ``data`` is {0,1} rows for binary models, real rows for the GRBM and the label grids
    for the grid model; ``trace`` must come from the matching forward pass.
    """
    if isinstance(params, RbmParams) and isinstance(trace, LayerTrace):
        loss, grads = rbm_backward(params, to_spin(data), masks, trace, temperature)
    elif isinstance(params, DbmParams) and isinstance(trace, LayerTrace):
        loss, grads = dbm_backward(params, to_spin(data), masks, trace, temperature)
    elif isinstance(params, GrbmParams) and isinstance(trace, GaussianTrace):
        loss, grads = grbm_backward(params, data, masks, trace)
    elif isinstance(params, GmrfParams) and isinstance(trace, GridTrace):
        loss, grads = gmrf_backward(params, data, trace)
    else:
        raise InvalidArgumentError(
            f"trace {type(trace).__name__} does not belong to {type(params).__name__}"
        )
    return loss * LOG2E, grads


def chunk_bounds(n: int, chunk_size: int = CHUNK_SIZE) -> List[Tuple[int, int]]:
    return [(start, min(start + chunk_size, n)) for start in range(0, n, chunk_size)]


def batch_gradient(
    adapter: ModelAdapter,
    params: ParamSet,
    batch: Any,
    masks: Optional[np.ndarray],
    threads: int = 1,
) -> Tuple[float, GradientBundle]:
    """Mean loss (nats) and mean gradient over a minibatch."""
    n = len(batch)
    if n == 0:
        raise InvalidArgumentError("empty minibatch")
    bounds = chunk_bounds(n)

    def run(bound: Tuple[int, int]) -> Tuple[float, GradientBundle]:
        lo, hi = bound
        chunk_masks = None if masks is None else masks[lo:hi]
        return adapter.loss_and_grads(params, batch[lo:hi], chunk_masks)

    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=min(threads, len(bounds))) as pool:
            parts = list(pool.map(run, bounds))
    else:
        parts = [run(bound) for bound in bounds]

    loss, grads = parts[0]
    for part_loss, part_grads in parts[1:]:
        loss += part_loss
        grads = grads + part_grads
    return loss / n, grads.scaled(1.0 / n)
