"""Plain-text dataset readers and writers."""
from pathlib import Path
from typing import List, Union

import numpy as np
import structlog

from ..errors import DatasetFormatError

logger = structlog.get_logger()

PathLike = Union[str, Path]


def _read_lines(path: PathLike) -> List[str]:
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DatasetFormatError(f"cannot read file: {e.strerror or e}", str(path)) from e


def _rows_to_matrix(rows: List[List[float]], path: PathLike) -> np.ndarray:
    if not rows:
        return np.zeros((0, 0))
    return np.asarray(rows, dtype=np.float64)


def load_binary(path: PathLike) -> np.ndarray:
    """One sample per line of space-separated 0/1 tokens; returns an [n, V] float array."""
    rows: List[List[float]] = []
    width = None
    for lineno, line in enumerate(_read_lines(path), start=1):
        tokens = line.split()
        if not tokens:
            continue
        for token in tokens:
            if token not in ("0", "1"):
                raise DatasetFormatError(f"expected 0 or 1, found '{token}'", str(path), lineno)
        if width is None:
            width = len(tokens)
        elif len(tokens) != width:
            raise DatasetFormatError(f"row has {len(tokens)} values, expected {width}", str(path), lineno)
        rows.append([float(t) for t in tokens])
    logger.debug("Loaded binary dataset", path=str(path), rows=len(rows), width=width)
    return _rows_to_matrix(rows, path)


def load_continuous(path: PathLike) -> np.ndarray:
    """Comma-separated finite reals per line; values outside [0, 1] only trigger a warning."""
    rows: List[List[float]] = []
    width = None
    for lineno, line in enumerate(_read_lines(path), start=1):
        if not line.strip():
            continue
        try:
            values = [float(token) for token in line.split(",")]
        except ValueError as e:
            raise DatasetFormatError(f"not a number: {e}", str(path), lineno) from e
        if not np.all(np.isfinite(values)):
            raise DatasetFormatError("non-finite value", str(path), lineno)
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise DatasetFormatError(f"row has {len(values)} values, expected {width}", str(path), lineno)
        rows.append(values)
    data = _rows_to_matrix(rows, path)
    if data.size and (data.min() < 0.0 or data.max() > 1.0):
        logger.warning("Continuous data outside [0, 1]", path=str(path), min=float(data.min()), max=float(data.max()))
    return data


def save_binary(path: PathLike, data: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [" ".join(str(int(x)) for x in row) for row in np.asarray(data)]
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def save_continuous(path: PathLike, data: np.ndarray) -> None:
    """Write rows with ``repr`` precision so they reload bit-exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(repr(float(x)) for x in row) for row in np.asarray(data, dtype=np.float64)]
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
