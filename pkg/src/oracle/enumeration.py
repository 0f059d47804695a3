"""
Exact inference and sampling by brute-force enumeration of tiny models.

Potentials are written in the plain {0,1} (or categorical) parameterisation, independently
of the message-passing derivations they are used to check.
"""
from dataclasses import dataclass
from typing import Callable, Dict, Mapping, Sequence

import numpy as np
import structlog
from scipy.special import logsumexp

from ..errors import CapacityError, InvalidArgumentError
from ..inference.grid_mrf import gmrf_unary
from ..models.params import DbmParams, GmrfParams, RbmParams

logger = structlog.get_logger()

MAX_JOINT_STATES = 1 << 20

LogPotential = Callable[[np.ndarray], np.ndarray]


@dataclass
class EnumerablePgm:
    """Discrete variables with ``cardinalities`` and a vectorised log-potential.

    ``log_potential`` maps an [S, n_vars] array of joint assignments to [S] log-values.
    """
    cardinalities: Sequence[int]
    log_potential: LogPotential

    @property
    def n_states(self) -> int:
        return int(np.prod([int(c) for c in self.cardinalities], dtype=object))

    def assignments(self) -> np.ndarray:
        if self.n_states > MAX_JOINT_STATES:
            raise CapacityError(f"{self.n_states} joint states exceed the bound of {MAX_JOINT_STATES}")
        logger.debug("Enumerating joint states", n_vars=len(self.cardinalities), n_states=self.n_states)
        grids = np.indices(tuple(int(c) for c in self.cardinalities))
        return grids.reshape(len(self.cardinalities), -1).T


def _consistent(pgm: EnumerablePgm, evidence: Mapping[int, int]):
    states = pgm.assignments()
    keep = np.ones(len(states), dtype=bool)
    for var, value in evidence.items():
        if not 0 <= value < pgm.cardinalities[var]:
            raise InvalidArgumentError(f"evidence value {value} out of range for variable {var}")
        keep &= states[:, var] == value
    states = states[keep]
    if len(states) == 0:
        raise InvalidArgumentError("evidence is inconsistent with every joint state")
    return states, np.asarray(pgm.log_potential(states), dtype=np.float64)


def exact_conditional_marginals(
    pgm: EnumerablePgm, evidence: Mapping[int, int], targets: Sequence[int]
) -> Dict[int, np.ndarray]:
    """p(x_t | evidence) for every target t, summing out all other variables."""
    states, logp = _consistent(pgm, evidence)
    log_z = logsumexp(logp)
    marginals = {}
    for t in targets:
        dist = np.zeros(pgm.cardinalities[t])
        for value in range(pgm.cardinalities[t]):
            hit = states[:, t] == value
            if hit.any():
                dist[value] = np.exp(logsumexp(logp[hit]) - log_z)
        marginals[t] = dist
    return marginals


def exact_sample(pgm: EnumerablePgm, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` joint samples [n, n_vars] by inverse-CDF over the enumerated distribution."""
    states, logp = _consistent(pgm, {})
    probs = np.exp(logp - logsumexp(logp))
    cdf = np.cumsum(probs)
    idx = np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right")
    return states[np.minimum(idx, len(states) - 1)]


def rbm_pgm(params: RbmParams) -> EnumerablePgm:
    """Variables v_0..v_{V-1}, h_0..h_{H-1} with
    log phi = 2 h'Wv + h'(c_H - W 1) + v'(c_V - W'1)."""
    W, c_V, c_H = params.W, params.c_V, params.c_H
    H, V = W.shape
    a_V = c_V - W.sum(axis=0)
    a_H = c_H - W.sum(axis=1)

    def log_potential(states: np.ndarray) -> np.ndarray:
        v = states[:, :V].astype(np.float64)
        h = states[:, V:].astype(np.float64)
        return 2.0 * np.einsum("si,ij,sj->s", h, W, v) + h @ a_H + v @ a_V

    return EnumerablePgm([2] * (V + H), log_potential)


def dbm_pgm(params: DbmParams) -> EnumerablePgm:
    """Variables v, h1, h2 (in that order) of the two-hidden-layer model."""
    W1, W2 = params.W_H1V, params.W_H2H1
    V, H1, H2 = params.dims
    a_V = params.c_V - W1.sum(axis=0)
    a_H1 = params.c_H1 - W1.sum(axis=1) - W2.sum(axis=0)
    a_H2 = params.c_H2 - W2.sum(axis=1)

    def log_potential(states: np.ndarray) -> np.ndarray:
        s = states.astype(np.float64)
        v, h1, h2 = s[:, :V], s[:, V:V + H1], s[:, V + H1:]
        pair = 2.0 * np.einsum("si,ij,sj->s", h1, W1, v) + 2.0 * np.einsum("si,ij,sj->s", h2, W2, h1)
        return pair + v @ a_V + h1 @ a_H1 + h2 @ a_H2

    return EnumerablePgm([2] * (V + H1 + H2), log_potential)


def grid_pgm(params: GmrfParams, image: np.ndarray) -> EnumerablePgm:
    """Pixel states of an observed image; variable r*C + c is pixel (r, c)."""
    image = np.asarray(image, dtype=np.float64)
    R, C = image.shape
    K = params.n_states
    unary = gmrf_unary(image, params.noise, K).reshape(R * C, K)
    edges = []
    for dr, dc, table in ((1, 0, params.pot_ud), (0, 1, params.pot_lr), (1, 1, params.pot_d1), (1, -1, params.pot_d2)):
        for r in range(R):
            for c in range(C):
                rr, cc = r + dr, c + dc
                if 0 <= rr < R and 0 <= cc < C:
                    edges.append((r * C + c, rr * C + cc, table))

    def log_potential(states: np.ndarray) -> np.ndarray:
        total = unary[np.arange(R * C), states].sum(axis=1)
        for src, dst, table in edges:
            total = total + table[states[:, src], states[:, dst]]
        return total

    return EnumerablePgm([K] * (R * C), log_potential)
