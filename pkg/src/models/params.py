"""Parameter containers for the four graphical-model families."""
from dataclasses import dataclass, field, fields
try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):
        __str__ = str.__str__
        __format__ = str.__format__

        @staticmethod
        def _generate_next_value_(name, start, count, last_values):
            return name.lower()
from typing import ClassVar, Dict, Tuple

import numpy as np

from ..errors import InvalidArgumentError


class ModelKind(StrEnum):
    RBM = "rbm"
    DBM = "dbm"
    GRBM = "grbm"
    GMRF = "gmrf"


class Label:
    """Segmentation label codes used by the border-ownership data."""
    OUT = 0
    IN = 1
    CONTOUR = 2
    NAMES = ("OUT", "IN", "CONTOUR")


def _as_float_array(name: str, value, ndim: int) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if arr.ndim != ndim:
        raise InvalidArgumentError(f"{name} must have {ndim} dimension(s), got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    return arr


@dataclass
class ParamSet:
    """Named float64 tensors with a model-kind tag.

    Subclasses declare their tensors as dataclass fields; ``TRAINABLE`` names the ones
    the optimizer updates.
    """

    KIND: ClassVar[ModelKind]
    TRAINABLE: ClassVar[Tuple[str, ...]]

    def tensor_names(self) -> Tuple[str, ...]:
        return tuple(f.name for f in fields(self))

    def as_tensors(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.tensor_names()}

    @classmethod
    def from_tensors(cls, tensors: Dict[str, np.ndarray]) -> "ParamSet":
        names = tuple(f.name for f in fields(cls))
        missing = [n for n in names if n not in tensors]
        if missing:
            raise InvalidArgumentError(f"missing tensors for {cls.KIND}: {missing}")
        return cls(**{name: tensors[name] for name in names})

    def copy(self) -> "ParamSet":
        return type(self).from_tensors({k: np.copy(v) for k, v in self.as_tensors().items()})

    def with_tensors(self, **updates: np.ndarray) -> "ParamSet":
        tensors = self.as_tensors()
        tensors.update(updates)
        return type(self).from_tensors(tensors)


@dataclass
class RbmParams(ParamSet):
    """Binary RBM in the ±1-friendly parameterisation; ``W`` is [H, V]."""

    KIND: ClassVar[ModelKind] = ModelKind.RBM
    TRAINABLE: ClassVar[Tuple[str, ...]] = ("W", "c_V", "c_H", "tau")

    W: np.ndarray
    c_V: np.ndarray
    c_H: np.ndarray
    tau: np.ndarray = field(default_factory=lambda: np.zeros(()))

    def __post_init__(self):
        self.W = _as_float_array("W", self.W, 2)
        self.c_V = _as_float_array("c_V", self.c_V, 1)
        self.c_H = _as_float_array("c_H", self.c_H, 1)
        self.tau = _as_float_array("tau", self.tau, 0)
        H, V = self.W.shape
        if H < 1 or V < 1:
            raise InvalidArgumentError(f"RBM needs H, V >= 1, got W shape {self.W.shape}")
        if self.c_V.shape != (V,) or self.c_H.shape != (H,):
            raise InvalidArgumentError(
                f"bias shapes {self.c_V.shape}, {self.c_H.shape} do not match W {self.W.shape}"
            )

    @property
    def n_hidden(self) -> int:
        return self.W.shape[0]

    @property
    def n_visible(self) -> int:
        return self.W.shape[1]


@dataclass
class DbmParams(ParamSet):
    """Two-hidden-layer binary DBM."""

    KIND: ClassVar[ModelKind] = ModelKind.DBM
    TRAINABLE: ClassVar[Tuple[str, ...]] = ("W_H1V", "W_H2H1", "c_V", "c_H1", "c_H2", "tau")

    W_H1V: np.ndarray
    W_H2H1: np.ndarray
    c_V: np.ndarray
    c_H1: np.ndarray
    c_H2: np.ndarray
    tau: np.ndarray = field(default_factory=lambda: np.zeros(()))

    def __post_init__(self):
        self.W_H1V = _as_float_array("W_H1V", self.W_H1V, 2)
        self.W_H2H1 = _as_float_array("W_H2H1", self.W_H2H1, 2)
        self.c_V = _as_float_array("c_V", self.c_V, 1)
        self.c_H1 = _as_float_array("c_H1", self.c_H1, 1)
        self.c_H2 = _as_float_array("c_H2", self.c_H2, 1)
        self.tau = _as_float_array("tau", self.tau, 0)
        H1, V = self.W_H1V.shape
        H2 = self.W_H2H1.shape[0]
        if min(H1, H2, V) < 1:
            raise InvalidArgumentError("DBM needs H1, H2, V >= 1")
        if self.W_H2H1.shape != (H2, H1):
            raise InvalidArgumentError(f"W_H2H1 shape {self.W_H2H1.shape} does not match H1={H1}")
        if self.c_V.shape != (V,) or self.c_H1.shape != (H1,) or self.c_H2.shape != (H2,):
            raise InvalidArgumentError("DBM bias shapes do not match the weight matrices")

    @property
    def dims(self) -> Tuple[int, int, int]:
        """(V, H1, H2)"""
        return self.W_H1V.shape[1], self.W_H1V.shape[0], self.W_H2H1.shape[0]


@dataclass
class GrbmParams(ParamSet):
    """Gaussian RBM with unit visible variance; ``W`` is [H, V]."""

    KIND: ClassVar[ModelKind] = ModelKind.GRBM
    TRAINABLE: ClassVar[Tuple[str, ...]] = ("W", "b", "c")
    SIGMA: ClassVar[float] = 1.0

    W: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.W = _as_float_array("W", self.W, 2)
        self.b = _as_float_array("b", self.b, 1)
        self.c = _as_float_array("c", self.c, 1)
        H, V = self.W.shape
        if self.b.shape != (V,) or self.c.shape != (H,):
            raise InvalidArgumentError("GRBM bias shapes do not match W")


@dataclass
class GmrfParams(ParamSet):
    """Clone-structured 8-connected grid MRF.

    States ``0..K-3`` are contour clones, ``K-2`` is IN and ``K-1`` is OUT. ``noise``
    holds the emission probabilities (p_contour, p_in, p_out) and is never trained.
    """

    KIND: ClassVar[ModelKind] = ModelKind.GMRF
    TRAINABLE: ClassVar[Tuple[str, ...]] = ("pot_ud", "pot_lr", "pot_d1", "pot_d2")

    pot_ud: np.ndarray
    pot_lr: np.ndarray
    pot_d1: np.ndarray
    pot_d2: np.ndarray
    noise: np.ndarray

    def __post_init__(self):
        for name in self.TRAINABLE:
            setattr(self, name, _as_float_array(name, getattr(self, name), 2))
        self.noise = _as_float_array("noise", self.noise, 1)
        K = self.pot_ud.shape[0]
        if K < 3:
            raise InvalidArgumentError(f"grid MRF needs K >= 3 states, got {K}")
        for name in self.TRAINABLE:
            if getattr(self, name).shape != (K, K):
                raise InvalidArgumentError(f"{name} must be [{K}x{K}]")
        if self.noise.shape != (3,) or np.any(self.noise < 0) or np.any(self.noise > 1):
            raise InvalidArgumentError("noise must be three probabilities (p_contour, p_in, p_out)")

    @property
    def n_states(self) -> int:
        return self.pot_ud.shape[0]

    @property
    def n_clones(self) -> int:
        return self.n_states - 2

    @property
    def in_state(self) -> int:
        return self.n_states - 2

    @property
    def out_state(self) -> int:
        return self.n_states - 1


PARAM_CLASSES: Dict[ModelKind, type] = {
    ModelKind.RBM: RbmParams,
    ModelKind.DBM: DbmParams,
    ModelKind.GRBM: GrbmParams,
    ModelKind.GMRF: GmrfParams,
}


@dataclass
class GradientBundle:
    """Gradients shape-congruent with the trainable tensors of a ParamSet."""

    kind: ModelKind
    tensors: Dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, params: ParamSet) -> "GradientBundle":
        return cls(params.KIND, {name: np.zeros_like(getattr(params, name)) for name in params.TRAINABLE})

    def check_congruent(self, params: ParamSet) -> None:
        if self.kind != params.KIND:
            raise InvalidArgumentError(f"gradient kind {self.kind} does not match {params.KIND}")
        for name in params.TRAINABLE:
            if self.tensors[name].shape != getattr(params, name).shape:
                raise InvalidArgumentError(f"gradient for {name} has shape {self.tensors[name].shape}")

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.tensors.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([np.ravel(self.tensors[k]) for k in sorted(self.tensors)])

    def __add__(self, other: "GradientBundle") -> "GradientBundle":
        if other.kind != self.kind:
            raise InvalidArgumentError("cannot add gradients of different model kinds")
        return GradientBundle(self.kind, {k: self.tensors[k] + other.tensors[k] for k in self.tensors})

    def scaled(self, factor: float) -> "GradientBundle":
        return GradientBundle(self.kind, {k: v * factor for k, v in self.tensors.items()})
