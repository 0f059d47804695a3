"""Synthetic corpora for desk-scale experiments."""
import numpy as np
import structlog

from ..errors import InvalidArgumentError
from ..inference.numerics import tau_for_temperature
from ..models.params import RbmParams
from ..oracle.enumeration import exact_sample, rbm_pgm

logger = structlog.get_logger()


def texture_templates(
    R: int, C: int, rng: np.random.Generator, n_templates: int = 4, amplitude: float = 1.0
) -> np.ndarray:
    """Smooth plane-wave patterns [n_templates, R, C] with 0.5 to 2 cycles across the image."""
    rows, cols = np.indices((R, C))
    templates = np.empty((n_templates, R, C))
    for k in range(n_templates):
        fy, fx = rng.uniform(0.5, 2.0, size=2)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        templates[k] = amplitude * np.sin(2.0 * np.pi * (fy * rows / R + fx * cols / C) + phase)
    return templates


def gen_texture(
    n: int,
    R: int,
    C: int,
    rng: np.random.Generator,
    n_templates: int = 4,
    amplitude: float = 1.0,
    p_on: float = 0.5,
    noise_std: float = 1.0,
) -> np.ndarray:
    """Continuous images flattened to [n, R*C].

    Each image sums a random subset of one shared template bank and adds Gaussian pixel
    noise. Unit noise matches the fixed sigma of the Gaussian RBM.
    """
    if n < 0 or R < 1 or C < 1 or n_templates < 1:
        raise InvalidArgumentError("n >= 0, R, C >= 1 and n_templates >= 1 are required")
    if not 0.0 <= p_on <= 1.0 or noise_std < 0:
        raise InvalidArgumentError("p_on must lie in [0, 1] and noise_std must be >= 0")
    templates = texture_templates(R, C, rng, n_templates, amplitude).reshape(n_templates, R * C)
    switches = (rng.random((n, n_templates)) < p_on).astype(np.float64)
    images = switches @ templates + noise_std * rng.standard_normal((n, R * C))
    logger.debug("Generated texture images", n=n, grid=(R, C), templates=n_templates)
    return images


def random_rbm_params(V: int, H: int, rng: np.random.Generator, scale: float = 1.0) -> RbmParams:
    """Ground-truth RBM at temperature 1, weights and biases uniform in [-scale, scale]."""
    return RbmParams(
        W=rng.uniform(-scale, scale, size=(H, V)),
        c_V=rng.uniform(-scale, scale, size=V),
        c_H=rng.uniform(-scale, scale, size=H),
        tau=np.asarray(tau_for_temperature(1.0)),
    )


def gen_rbm_samples(params: RbmParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """Exact visible samples [n, V] (0/1) drawn by enumerating the joint distribution."""
    joint = exact_sample(rbm_pgm(params), n, rng)
    return joint[:, :params.n_visible].astype(np.float64)
