"""
Binary checkpoint container.

Layout (little-endian)::

    b"QTBP"  uint32 version
    uint32 len + utf-8 model kind
    uint32 len + utf-8 JSON metadata
    uint32 tensor count
    per tensor: uint32 len + utf-8 name, uint32 ndim, ndim x uint64 shape, float64 data
"""
import math
import struct
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
import structlog
from pydantic import ValidationError

from ..errors import CheckpointFormatError, InvalidArgumentError, KindMismatchError
from ..models.params import PARAM_CLASSES, ModelKind, ParamSet
from ..models.training import CheckpointMeta

logger = structlog.get_logger()

MAGIC = b"QTBP"
FORMAT_VERSION = 1
MAX_NAME_BYTES = 1 << 16
MAX_NDIM = 8


@dataclass
class Checkpoint:
    kind: ModelKind
    params: ParamSet
    meta: CheckpointMeta

    def __post_init__(self):
        if self.params.KIND != self.kind:
            raise InvalidArgumentError(f"parameters of kind {self.params.KIND} tagged as {self.kind}")


def _pack_str(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), _pack_str(str(checkpoint.kind)),
             _pack_str(checkpoint.meta.model_dump_json())]
    tensors = checkpoint.params.as_tensors()
    parts.append(struct.pack("<I", len(tensors)))
    for name, value in tensors.items():
        value = np.asarray(value, dtype="<f8")
        parts.append(_pack_str(name))
        parts.append(struct.pack("<I", value.ndim))
        parts.append(struct.pack(f"<{value.ndim}Q", *value.shape))
        parts.append(value.tobytes(order="C"))
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, field: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointFormatError("file is truncated", field)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def uint32(self, field: str) -> int:
        return struct.unpack("<I", self.take(4, field))[0]

    def string(self, field: str, limit: int = MAX_NAME_BYTES) -> str:
        n = self.uint32(field)
        if n > limit:
            raise CheckpointFormatError(f"length {n} exceeds {limit}", field)
        try:
            return self.take(n, field).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointFormatError("invalid utf-8", field) from e


def decode_checkpoint(data: bytes) -> Checkpoint:
    """Parse and validate a checkpoint; every failure names the offending field."""
    reader = _Reader(data)
    if reader.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointFormatError("not a checkpoint file", "magic")
    version = reader.uint32("version")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"unsupported version {version}", "version")
    kind_text = reader.string("kind")
    try:
        kind = ModelKind(kind_text)
    except ValueError as e:
        raise CheckpointFormatError(f"unknown model kind '{kind_text}'", "kind") from e
    try:
        meta = CheckpointMeta.model_validate_json(reader.string("metadata", limit=len(data)))
    except ValidationError as e:
        raise CheckpointFormatError(str(e), "metadata") from e

    count = reader.uint32("tensor_count")
    tensors: Dict[str, np.ndarray] = {}
    for i in range(count):
        name = reader.string(f"tensor[{i}].name")
        ndim = reader.uint32(f"{name}.ndim")
        if ndim > MAX_NDIM:
            raise CheckpointFormatError(f"ndim {ndim} exceeds {MAX_NDIM}", f"{name}.ndim")
        shape: Tuple[int, ...] = struct.unpack(f"<{ndim}Q", reader.take(8 * ndim, f"{name}.shape"))
        size = math.prod(shape)
        if 8 * size > len(data) - reader.pos:
            raise CheckpointFormatError(f"file is truncated: shape {shape} needs {8 * size} bytes", f"{name}.shape")
        raw = reader.take(8 * size, f"{name}.data")
        tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
    if reader.pos != len(data):
        raise CheckpointFormatError(f"{len(data) - reader.pos} trailing bytes", "tensor_count")

    cls = PARAM_CLASSES[kind]
    expected = {f.name for f in fields(cls)}
    if set(tensors) != expected:
        raise CheckpointFormatError(f"expected tensors {sorted(expected)}, found {sorted(tensors)}", "tensors")
    try:
        params = cls.from_tensors(tensors)
    except InvalidArgumentError as e:
        raise CheckpointFormatError(str(e), "shape_table") from e
    return Checkpoint(kind=kind, params=params, meta=meta)


def save_checkpoint(path: Union[str, Path], checkpoint: Checkpoint) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(checkpoint))
    logger.info("Checkpoint saved", path=str(path), kind=str(checkpoint.kind))


def load_checkpoint(path: Union[str, Path], expected_kind: Optional[ModelKind] = None) -> Checkpoint:
    """Read a checkpoint; with ``expected_kind`` a different kind raises KindMismatchError."""
    checkpoint = decode_checkpoint(Path(path).read_bytes())
    if expected_kind is not None and checkpoint.kind != expected_kind:
        raise KindMismatchError(f"checkpoint {path} holds a {checkpoint.kind} model, expected {expected_kind}")
    return checkpoint
