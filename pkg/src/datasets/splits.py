"""Seeded train/validation/test splits."""
from typing import Sequence, Tuple, TypeVar

import numpy as np

from ..errors import InvalidArgumentError

T = TypeVar("T")


def split_sizes(n: int, fractions: Sequence[float]) -> Tuple[int, int, int]:
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise InvalidArgumentError("fractions must be three non-negative values")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise InvalidArgumentError(f"fractions must sum to 1, got {sum(fractions)}")
    n_train = int(round(fractions[0] * n))
    n_valid = min(int(round(fractions[1] * n)), n - n_train)
    return n_train, n_valid, n - n_train - n_valid


def split(dataset: T, fractions: Sequence[float], seed: int) -> Tuple[T, T, T]:
    """Permute rows with ``seed`` then cut contiguously; works for arrays and sample sets."""
    n = len(dataset)
    n_train, n_valid, _ = split_sizes(n, fractions)
    order = np.random.default_rng(seed).permutation(n)
    return (
        dataset[order[:n_train]],
        dataset[order[n_train:n_train + n_valid]],
        dataset[order[n_train + n_valid:]],
    )
