"""Query, training and checkpoint data models."""
from typing import List, Literal, Optional, Tuple
from pydantic import BaseModel, Field, field_validator, model_validator

from .params import ModelKind


class QuerySpec(BaseModel):
    """Distribution over query masks (1 = evidence, 0 = target)."""
    kind: Literal["bernoulli", "fixed", "patch"]
    p_observe: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    patch_h: Optional[int] = Field(default=None, gt=0)
    patch_w: Optional[int] = Field(default=None, gt=0)
    mask: Optional[List[int]] = None

    @field_validator('mask')
    def validate_mask(cls, v):
        if v is not None and any(bit not in (0, 1) for bit in v):
            raise ValueError('fixed mask entries must be 0 or 1')
        return v

    @model_validator(mode="after")
    def validate_kind_fields(self):
        """Exactly the fields of the active kind are set."""
        has_p = self.p_observe is not None
        has_patch = self.patch_h is not None or self.patch_w is not None
        has_mask = self.mask is not None
        if self.kind == "bernoulli" and (not has_p or has_patch or has_mask):
            raise ValueError('bernoulli queries take p_observe only')
        if self.kind == "patch" and (self.patch_h is None or self.patch_w is None or has_p or has_mask):
            raise ValueError('patch queries take patch_h and patch_w only')
        if self.kind == "fixed" and (has_p or has_patch):
            raise ValueError('fixed queries take an optional mask only')
        return self

    @classmethod
    def parse(cls, text: str) -> "QuerySpec":
        """Parse ``bernoulli:P``, ``patch:HxW``, ``fixed`` or ``fixed:1,0,...``."""
        kind, _, arg = text.strip().partition(":")
        kind = kind.strip().lower()
        try:
            if kind == "bernoulli":
                return cls(kind="bernoulli", p_observe=float(arg))
            if kind == "patch":
                h, _, w = arg.lower().partition("x")
                return cls(kind="patch", patch_h=int(h), patch_w=int(w))
            if kind == "fixed":
                mask = [int(b) for b in arg.split(",")] if arg.strip() else None
                return cls(kind="fixed", mask=mask)
        except ValueError as e:
            raise ValueError(f"invalid query '{text}': {e}") from e
        raise ValueError(f"unknown query kind in '{text}'")

    def to_string(self) -> str:
        if self.kind == "bernoulli":
            return f"bernoulli:{self.p_observe}"
        if self.kind == "patch":
            return f"patch:{self.patch_h}x{self.patch_w}"
        if self.mask is None:
            return "fixed"
        return "fixed:" + ",".join(str(b) for b in self.mask)


class GrbmConfig(BaseModel):
    """Gaussian unroll settings."""
    epsilon: float = Field(default=1e-4, gt=0.0, description="Observation variance of clamped units")
    N: int = Field(default=10, gt=0, description="Number of unrolled layers")


class TrainConfig(BaseModel):
    """Everything the trainer needs for one model kind."""
    model: ModelKind
    visible: Optional[int] = Field(default=None, gt=0)
    hidden: int = Field(default=5, gt=0)
    hidden2: int = Field(default=2, gt=0)
    layers: int = Field(default=10, gt=0)
    temperature: Optional[float] = Field(default=None, ge=0.0)
    lr: float = Field(default=0.01, gt=0.0)
    lr_grid: Optional[List[float]] = None
    batch_size: int = Field(default=500, gt=0)
    max_epochs: int = Field(default=50, gt=0)
    patience: int = Field(default=5, ge=0)
    seed: int = Field(default=0, ge=0)
    query: QuerySpec = Field(default_factory=lambda: QuerySpec(kind="bernoulli", p_observe=0.5))
    epsilon: float = Field(default=1e-4, gt=0.0)
    n_clones: int = Field(default=8, gt=0)
    image_shape: Optional[Tuple[int, int]] = None
    threads: int = Field(default=1, ge=1)
    record_wall_time: bool = False

    @model_validator(mode="after")
    def validate_model_fields(self):
        """Reject configurations that could never produce a training target."""
        if self.model != ModelKind.GMRF:
            if self.visible is None:
                raise ValueError(f'{self.model} needs the number of visible units')
            if self.query.kind == "bernoulli" and self.query.p_observe == 1.0:
                raise ValueError('bernoulli p_observe=1 leaves no targets to train on')
            if self.query.kind == "fixed":
                if self.query.mask is None or len(self.query.mask) != self.visible:
                    raise ValueError('fixed queries need a mask with one entry per visible unit')
                if all(self.query.mask):
                    raise ValueError('fixed mask has no targets')
            if self.query.kind == "patch":
                if self.image_shape is None:
                    raise ValueError('patch queries need image_shape')
                if self.image_shape[0] * self.image_shape[1] != self.visible:
                    raise ValueError('image_shape does not cover the visible units')
        elif self.query.kind != "fixed":
            raise ValueError('the grid model is trained with the fixed image-to-labels query')
        if self.model == ModelKind.GRBM and self.temperature is not None:
            raise ValueError('Gaussian messages carry no temperature')
        return self

    def learning_rates(self) -> List[float]:
        return list(self.lr_grid) if self.lr_grid else [self.lr]


class CheckpointMeta(BaseModel):
    """Training metadata stored alongside the tensors of a checkpoint."""
    epoch: int = 0
    best_valid_nce: Optional[float] = None
    seed: int = 0
    lr: Optional[float] = None
    layers: int = Field(default=10, gt=0)
    temperature: Optional[float] = None
    epsilon: float = 1e-4
    query: str = "bernoulli:0.5"
    image_shape: Optional[Tuple[int, int]] = None


class MetricRecord(BaseModel):
    """One line of the metrics stream."""
    epoch: int
    split: Literal["train", "valid", "test"]
    loss_bits: float
    nce: float
    lr: float
    wall_ms: float = 0.0
    iou: Optional[float] = None
    event: Optional[str] = None
