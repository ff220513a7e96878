"""Binary instance masks: RLE codec, tight boxes, and pairwise overlap statistics.

Dense boolean bitmaps are the computation representation; run-length encoding
is the storage and interchange representation. Conversions are explicit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, MalformedRle

# Designated bbox for masks with no set pixels.
EMPTY_BBOX = (0, 0, 0, 0)


@dataclass(frozen=True)
class RunLength:
    """Alternating background/foreground run counts in column-major pixel order.

    The first count is always a background run and may be zero.
    """

    size: tuple[int, int]  # (height, width)
    counts: tuple[int, ...]


def encode_rle(bitmap: np.ndarray) -> RunLength:
    """Encode a 2-D binary grid as column-major run lengths."""
    grid = np.asarray(bitmap, dtype=bool)
    if grid.ndim != 2 or grid.size == 0:
        raise ValueError("bitmap must be a non-empty 2-D grid")
    flat = grid.ravel(order="F")
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    counts = [int(c) for c in np.diff(bounds)]
    if flat[0]:
        counts.insert(0, 0)
    return RunLength(size=(int(grid.shape[0]), int(grid.shape[1])), counts=tuple(counts))


def decode_rle(rle: RunLength) -> np.ndarray:
    """Decode run lengths back to a dense boolean grid. Inverse of encode_rle."""
    height, width = rle.size
    counts = np.asarray(rle.counts, dtype=np.int64)
    if counts.size and counts.min() < 0:
        raise MalformedRle("run counts must be non-negative")
    total = int(counts.sum())
    if total != height * width:
        raise MalformedRle(
            f"run counts sum to {total}, expected {height * width} for {height}x{width}"
        )
    values = np.zeros(len(rle.counts), dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, counts)
    return flat.reshape((height, width), order="F")


def bbox_of(bitmap: np.ndarray) -> tuple[int, int, int, int]:
    """Tight (x, y, w, h) box around the set pixels; EMPTY_BBOX when none."""
    grid = np.asarray(bitmap, dtype=bool)
    rows = np.flatnonzero(grid.any(axis=1))
    if rows.size == 0:
        return EMPTY_BBOX
    cols = np.flatnonzero(grid.any(axis=0))
    y0, y1 = int(rows[0]), int(rows[-1])
    x0, x1 = int(cols[0]), int(cols[-1])
    return (x0, y0, x1 - x0 + 1, y1 - y0 + 1)


@dataclass(frozen=True, eq=False)
class Mask:
    """One candidate instance region.

    Area and bbox are derived from the bitmap at construction, so they are
    consistent by definition. The bitmap is made read-only.
    """

    id: str
    bitmap: np.ndarray
    stability_score: float | None = None
    predicted_iou: float | None = None

    def __post_init__(self) -> None:
        grid = np.array(self.bitmap, dtype=bool, copy=True, order="C")
        if grid.ndim != 2:
            raise ValueError("mask bitmap must be 2-D")
        grid.setflags(write=False)
        object.__setattr__(self, "bitmap", grid)
        object.__setattr__(self, "_area", int(np.count_nonzero(grid)))
        object.__setattr__(self, "_bbox", bbox_of(grid))

    @property
    def height(self) -> int:
        return int(self.bitmap.shape[0])

    @property
    def width(self) -> int:
        return int(self.bitmap.shape[1])

    @property
    def area(self) -> int:
        return self._area  # type: ignore[attr-defined]

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        return self._bbox  # type: ignore[attr-defined]

    def to_rle(self) -> RunLength:
        return encode_rle(self.bitmap)

    @classmethod
    def from_rle(
        cls,
        mask_id: str,
        rle: RunLength,
        stability_score: float | None = None,
        predicted_iou: float | None = None,
    ) -> "Mask":
        return cls(
            id=mask_id,
            bitmap=decode_rle(rle),
            stability_score=stability_score,
            predicted_iou=predicted_iou,
        )


@dataclass(frozen=True)
class OverlapStats:
    intersection: int
    union: int
    iou: float
    smaller_ratio: float


def overlap_stats(a: Mask, b: Mask) -> OverlapStats:
    """Pairwise pixel-set statistics between two masks of identical size.

    smaller_ratio is the intersection divided by the smaller mask's area,
    the criterion used by suppression; it is 0 when either mask is empty.
    """
    if a.bitmap.shape != b.bitmap.shape:
        raise DimensionMismatch(
            f"mask {a.id} is {a.bitmap.shape}, mask {b.id} is {b.bitmap.shape}"
        )
    inter = int(np.count_nonzero(a.bitmap & b.bitmap))
    union = a.area + b.area - inter
    iou = inter / union if union else 0.0
    smaller = min(a.area, b.area)
    ratio = inter / smaller if smaller else 0.0
    return OverlapStats(intersection=inter, union=union, iou=iou, smaller_ratio=ratio)
