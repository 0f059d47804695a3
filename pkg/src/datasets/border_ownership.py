"""
Synthetic border-ownership corpus: noisy contour images paired with OUT/IN/CONTOUR labels.

File format: a header ``R C``, R label rows, a blank line, R image rows; further pairs
follow after another blank line. Image-only files used for inference repeat a header
``R C`` and R image rows per image. All values are space-separated integers.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Literal, Optional, Tuple, Union

import numpy as np
import structlog

from ..errors import DatasetFormatError, InvalidArgumentError
from ..models.params import Label

logger = structlog.get_logger()

ShapeKind = Literal["rectangle", "ellipse"]

# 8-neighbourhood offsets
NEIGHBOURS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))
SEGMENT_STEPS = ((0, 1), (1, 0), (1, 1), (1, -1))
MARGIN = 2
MAX_SHAPE_DRAWS = 1000


@dataclass
class BorderOwnershipSet:
    """Stacked images [n, R, C] (0/1) and labels [n, R, C] (label codes)."""
    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 3 or self.images.shape != self.labels.shape:
            raise InvalidArgumentError(
                f"images {self.images.shape} and labels {self.labels.shape} must be equal [n, R, C] stacks"
            )

    def __len__(self) -> int:
        return self.images.shape[0]

    def __getitem__(self, idx) -> "BorderOwnershipSet":
        if isinstance(idx, (int, np.integer)):
            idx = [idx]
        return BorderOwnershipSet(self.images[idx], self.labels[idx])

    @property
    def grid_shape(self) -> Tuple[int, int]:
        return self.images.shape[1], self.images.shape[2]

    def pairs(self) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        return zip(self.images, self.labels)


def _neighbour_stack(mask: np.ndarray) -> np.ndarray:
    padded = np.pad(mask, 1, constant_values=False)
    R, C = mask.shape
    return np.stack([padded[1 + dr:1 + dr + R, 1 + dc:1 + dc + C] for dr, dc in NEIGHBOURS])


def _filled_shape(R: int, C: int, kind: ShapeKind, rng: np.random.Generator) -> np.ndarray:
    rows, cols = np.indices((R, C))
    if kind == "rectangle":
        h = rng.integers(3, R - 2 * MARGIN + 1)
        w = rng.integers(3, C - 2 * MARGIN + 1)
        top = rng.integers(MARGIN, R - MARGIN - h + 1)
        left = rng.integers(MARGIN, C - MARGIN - w + 1)
        return (rows >= top) & (rows < top + h) & (cols >= left) & (cols < left + w)
    ry = rng.uniform(2.0, (R - 2 * MARGIN - 1) / 2.0)
    rx = rng.uniform(2.0, (C - 2 * MARGIN - 1) / 2.0)
    cy = rng.uniform(MARGIN + ry, R - 1 - MARGIN - ry)
    cx = rng.uniform(MARGIN + rx, C - 1 - MARGIN - rx)
    return ((rows - cy) / ry) ** 2 + ((cols - cx) / rx) ** 2 <= 1.0


def shape_labels(filled: np.ndarray) -> np.ndarray:
    """IN is the 8-erosion of the shape, CONTOUR the rest of it; contour pixels with no IN
    neighbour become OUT."""
    inside = filled & _neighbour_stack(filled).all(axis=0)
    contour = filled & ~inside
    contour &= _neighbour_stack(inside).any(axis=0)
    labels = np.full(filled.shape, Label.OUT, dtype=np.int64)
    labels[inside] = Label.IN
    labels[contour] = Label.CONTOUR
    return labels


def _shape_with_interior(R: int, C: int, kind: ShapeKind, rng: np.random.Generator) -> np.ndarray:
    # thin ellipses can erode to nothing; redraw them
    for _ in range(MAX_SHAPE_DRAWS):
        labels = shape_labels(_filled_shape(R, C, kind, rng))
        if (labels == Label.IN).any():
            return labels
    raise InvalidArgumentError(f"no {kind} with an interior found in {MAX_SHAPE_DRAWS} draws on a {R}x{C} grid")


def _check_geometry(R: int, C: int, kind: ShapeKind) -> None:
    if kind not in ("rectangle", "ellipse"):
        raise InvalidArgumentError(f"unknown shape kind '{kind}'")
    smallest = 7 if kind == "rectangle" else 9
    if R < smallest or C < smallest:
        raise InvalidArgumentError(f"a {kind} with a {MARGIN}-pixel margin needs a grid of at least {smallest}x{smallest}")


def gen_border_ownership(
    n: int,
    R: int,
    C: int,
    kind: ShapeKind,
    rng: np.random.Generator,
    p_drop: float = 0.2,
    n_spurious: int = 8,
    spur_len: int = 3,
) -> BorderOwnershipSet:
    """Random filled shapes with a dropped-out contour and spurious straight segments."""
    _check_geometry(R, C, kind)
    if n < 0 or not 0.0 <= p_drop <= 1.0 or n_spurious < 0 or spur_len < 1:
        raise InvalidArgumentError("n, n_spurious >= 0, spur_len >= 1 and p_drop in [0, 1] are required")
    images = np.zeros((n, R, C), dtype=np.int64)
    labels = np.zeros((n, R, C), dtype=np.int64)
    for i in range(n):
        labels[i] = _shape_with_interior(R, C, kind, rng)
        lit = (labels[i] == Label.CONTOUR) & (rng.random((R, C)) >= p_drop)
        images[i][lit] = 1
        for _ in range(n_spurious):
            r, c = rng.integers(0, R), rng.integers(0, C)
            dr, dc = SEGMENT_STEPS[rng.integers(0, len(SEGMENT_STEPS))]
            for k in range(spur_len):
                rr, cc = r + k * dr, c + k * dc
                if 0 <= rr < R and 0 <= cc < C:
                    images[i, rr, cc] = 1
    logger.debug("Generated border-ownership pairs", n=n, grid=(R, C), kind=kind)
    return BorderOwnershipSet(images, labels)


def validate_labels(labels: np.ndarray) -> bool:
    """Every CONTOUR pixel touches at least one IN and one OUT pixel."""
    labels = np.asarray(labels)
    contour = labels == Label.CONTOUR
    near_in = _neighbour_stack(labels == Label.IN).any(axis=0)
    near_out = _neighbour_stack(labels == Label.OUT).any(axis=0)
    return bool(np.all(near_in[contour] & near_out[contour]))


def save_border_ownership(path: Union[str, Path], dataset: BorderOwnershipSet) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    R, C = dataset.grid_shape
    blocks = []
    for image, labels in dataset.pairs():
        label_rows = "\n".join(" ".join(str(int(x)) for x in row) for row in labels)
        image_rows = "\n".join(" ".join(str(int(x)) for x in row) for row in image)
        blocks.append(f"{R} {C}\n{label_rows}\n\n{image_rows}\n")
    path.write_text("\n".join(blocks), encoding="utf-8")


def _blocks(lines: List[str]) -> List[List[Tuple[int, str]]]:
    blocks, current = [], []
    for lineno, line in enumerate(lines, start=1):
        if line.strip():
            current.append((lineno, line))
        elif current:
            blocks.append(current)
            current = []
    if current:
        blocks.append(current)
    return blocks


def _parse_grid(rows: List[Tuple[int, str]], C: int, allowed: Tuple[int, ...], path: str) -> np.ndarray:
    grid = []
    for lineno, line in rows:
        tokens = line.split()
        if len(tokens) != C:
            raise DatasetFormatError(f"row has {len(tokens)} values, expected {C}", path, lineno)
        try:
            values = [int(t) for t in tokens]
        except ValueError as e:
            raise DatasetFormatError(f"not an integer: {e}", path, lineno) from e
        if any(v not in allowed for v in values):
            raise DatasetFormatError(f"values must be in {allowed}", path, lineno)
        grid.append(values)
    return np.asarray(grid, dtype=np.int64)


def _read_blocks(path: Union[str, Path]) -> Tuple[str, List[List[Tuple[int, str]]]]:
    path_str = str(path)
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DatasetFormatError(f"cannot read file: {e.strerror or e}", path_str) from e
    return path_str, _blocks(lines)


def _grid_header(head: Tuple[int, str], path: str, shape: Optional[Tuple[int, int]]) -> Tuple[int, int]:
    head_no, line = head
    try:
        R, C = (int(t) for t in line.split())
    except ValueError as e:
        raise DatasetFormatError("header must be 'R C'", path, head_no) from e
    if R < 1 or C < 1:
        raise DatasetFormatError("grid dimensions must be positive", path, head_no)
    if shape is not None and (R, C) != shape:
        raise DatasetFormatError(f"grid {R}x{C} differs from the first grid {shape}", path, head_no)
    return R, C


def _parse_pairs(blocks: List[List[Tuple[int, str]]], path_str: str) -> BorderOwnershipSet:
    if len(blocks) % 2:
        last = blocks[-1][0][0]
        raise DatasetFormatError("label block without a matching image block", path_str, last)
    images, labels = [], []
    shape = None
    for k in range(0, len(blocks), 2):
        R, C = shape = _grid_header(blocks[k][0], path_str, shape)
        label_rows, image_rows = blocks[k][1:], blocks[k + 1]
        if len(label_rows) != R:
            raise DatasetFormatError(f"expected {R} label rows", path_str, blocks[k][0][0])
        if len(image_rows) != R:
            raise DatasetFormatError(f"expected {R} image rows", path_str, image_rows[0][0])
        labels.append(_parse_grid(label_rows, C, (Label.OUT, Label.IN, Label.CONTOUR), path_str))
        images.append(_parse_grid(image_rows, C, (0, 1), path_str))
    if not images:
        return BorderOwnershipSet(np.zeros((0, 0, 0)), np.zeros((0, 0, 0)))
    return BorderOwnershipSet(np.stack(images), np.stack(labels))


def load_border_ownership(path: Union[str, Path]) -> BorderOwnershipSet:
    path_str, blocks = _read_blocks(path)
    return _parse_pairs(blocks, path_str)


def save_images(path: Union[str, Path], images: np.ndarray) -> None:
    """Image-only grid file: every image is a header ``R C`` and R rows of 0/1."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    images = np.asarray(images, dtype=np.int64)
    blocks = []
    for image in images:
        rows = "\n".join(" ".join(str(int(x)) for x in row) for row in image)
        blocks.append(f"{image.shape[0]} {image.shape[1]}\n{rows}\n")
    path.write_text("\n".join(blocks), encoding="utf-8")


def load_images(path: Union[str, Path]) -> np.ndarray:
    """Image stack [n, R, C] from an image-only grid file or a labelled border-ownership file.

    A labelled file is recognised by its second block, which holds one line fewer than
    the first (image rows carry no header).
    """
    path_str, blocks = _read_blocks(path)
    if len(blocks) >= 2 and len(blocks[1]) == len(blocks[0]) - 1:
        return _parse_pairs(blocks, path_str).images
    images = []
    shape = None
    for block in blocks:
        R, C = shape = _grid_header(block[0], path_str, shape)
        if len(block) - 1 != R:
            raise DatasetFormatError(f"expected {R} image rows", path_str, block[0][0])
        images.append(_parse_grid(block[1:], C, (0, 1), path_str))
    logger.debug("Loaded grid images", path=path_str, images=len(images))
    if not images:
        return np.zeros((0, 0, 0), dtype=np.int64)
    return np.stack(images)
