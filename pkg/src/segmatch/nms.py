"""Pairwise mask suppression that keeps the higher-stability mask.

Two masks conflict when their intersection exceeds a fraction of the smaller
mask's area. Masks are visited in input order, never pre-sorted by score, and
the scan semantics are deliberately order-sensitive: a mask suppressed midway
through its own inner scan keeps comparing against (and may suppress) later
masks with scores no higher than its own.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, MissingScore
from .masks import Mask

DEFAULT_OVERLAP_THRESHOLD = 0.9

# Intersections are accumulated in float32 via BLAS. Every partial sum is an
# integer bounded by the pixel count, so results are exact up to 2**24 pixels;
# larger grids fall back to float64 (exact up to 2**53).
_F32_EXACT_LIMIT = 2**24


@dataclass(frozen=True)
class NmsConfig:
    """Knobs for mask suppression.

    min_area is a pre-filter applied by callers before suppression (see
    filter_min_area); suppression itself judges only pairwise overlap.
    break_when_suppressed stops a mask's inner scan the moment the mask
    itself loses; it is off by default and changes results.
    """

    threshold: float = DEFAULT_OVERLAP_THRESHOLD
    min_area: int = 0
    break_when_suppressed: bool = False

    def __post_init__(self) -> None:
        if not (0.0 < self.threshold <= 1.0):
            raise ValueError(f"threshold must be in (0, 1], got {self.threshold}")
        if self.min_area < 0:
            raise ValueError("min_area must be >= 0")


@dataclass(frozen=True)
class NmsOutcome:
    """Kept input indices (input order) plus (index, suppressor index) pairs.

    Kept and suppressed indices partition the input indices. A recorded
    suppressor is the first mask that flipped the entry to suppressed; the
    suppressor itself may later be (or already have been) suppressed.
    """

    kept: tuple[int, ...]
    suppressed: tuple[tuple[int, int], ...]


def filter_min_area(masks: list[Mask], min_area: int) -> list[Mask]:
    """Drop masks with area below min_area, preserving order."""
    if min_area <= 0:
        return list(masks)
    return [m for m in masks if m.area >= min_area]


def mask_nms(masks: list[Mask], config: NmsConfig | None = None) -> NmsOutcome:
    """Suppress ambiguous overlapping masks, keeping the higher-stability one.

    For each pair still alive at comparison time, if the intersection exceeds
    threshold * min(areas), the lower-scoring mask is suppressed; on a score
    tie the later-indexed mask is suppressed.
    """
    config = config or NmsConfig()
    n = len(masks)
    if n == 0:
        return NmsOutcome(kept=(), suppressed=())

    shape = masks[0].bitmap.shape
    for m in masks:
        if m.bitmap.shape != shape:
            raise DimensionMismatch(
                f"mask {m.id} is {m.bitmap.shape}, expected {shape}"
            )
        if m.stability_score is None:
            raise MissingScore(f"mask {m.id} has no stability score")

    dtype = np.float32 if shape[0] * shape[1] <= _F32_EXACT_LIMIT else np.float64
    flat = np.stack([m.bitmap.ravel() for m in masks]).astype(dtype)
    areas = [m.area for m in masks]
    scores = [float(m.stability_score) for m in masks]  # type: ignore[arg-type]
    threshold = config.threshold

    keep = [True] * n
    suppressor: dict[int, int] = {}
    for i in range(n):
        if not keep[i]:
            continue
        # One matvec gives this mask's intersections with every later mask.
        inter_row = flat[i + 1 :] @ flat[i]
        for j in range(i + 1, n):
            if not keep[j]:
                continue
            inter = float(inter_row[j - i - 1])
            smaller_area = min(areas[i], areas[j])
            if inter > threshold * smaller_area:
                if scores[i] < scores[j]:
                    if keep[i]:
                        suppressor[i] = j
                    keep[i] = False
                    if config.break_when_suppressed:
                        break
                else:
                    if keep[j]:
                        suppressor[j] = i
                    keep[j] = False

    kept = tuple(i for i in range(n) if keep[i])
    suppressed = tuple((i, suppressor[i]) for i in range(n) if not keep[i])
    return NmsOutcome(kept=kept, suppressed=suppressed)
