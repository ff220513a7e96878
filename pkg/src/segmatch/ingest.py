"""Candidate-mask ingestion: segments files, segmenter adapters, and embed crops."""
from __future__ import annotations

import json
import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    AdapterFailure,
    DimensionMismatch,
    EmptyMask,
    InvariantViolation,
    MalformedRle,
    ParseError,
)
from .masks import EMPTY_BBOX, Mask, RunLength, bbox_of, decode_rle

CROP_MODES = ("masked-bbox", "bbox")
DEFAULT_EMBED_RESOLUTION = 224
GRAY_FILL = (128, 128, 128)


@dataclass(frozen=True)
class GridPromptSpec:
    """Regular point grid handed to the segmenter, with ambiguity fan-out."""

    points_per_side: int = 32
    multimask_outputs: int = 3

    def __post_init__(self) -> None:
        if self.points_per_side < 1:
            raise ValueError("points_per_side must be >= 1")
        if self.multimask_outputs not in (1, 3):
            raise ValueError("multimask_outputs must be 1 or 3")


def grid_points(spec: GridPromptSpec, image_size: tuple[int, int]) -> list[tuple[float, float]]:
    """Cell-center points of an n x n grid over the image, row-major.

    x_i = (i + 0.5) * W / n, y_j = (j + 0.5) * H / n; every point is strictly
    inside the image.
    """
    width, height = image_size
    if width <= 0 or height <= 0:
        raise ValueError("image dimensions must be positive")
    n = spec.points_per_side
    xs = [(i + 0.5) * width / n for i in range(n)]
    ys = [(j + 0.5) * height / n for j in range(n)]
    return [(x, y) for y in ys for x in xs]


@dataclass(frozen=True, eq=False)
class SegmentSet:
    """All candidate masks for one image, in the segmenter's emission order."""

    image_ref: str
    image_size: tuple[int, int]  # (width, height)
    segments: tuple[Mask, ...]

    def __post_init__(self) -> None:
        width, height = self.image_size
        for seg in self.segments:
            if (seg.height, seg.width) != (height, width):
                raise InvariantViolation(
                    f"segment {seg.id} is {seg.width}x{seg.height}, "
                    f"image is {width}x{height}"
                )
        object.__setattr__(self, "segments", tuple(self.segments))


def _validate_segment(entry: dict, image_size: tuple[int, int]) -> Mask:
    seg_id = str(entry.get("id", "<missing id>"))
    width, height = image_size
    try:
        rle = RunLength(
            size=(int(entry["rle"]["size"][0]), int(entry["rle"]["size"][1])),
            counts=tuple(int(c) for c in entry["rle"]["counts"]),
        )
        area = int(entry["area"])
        bbox = tuple(int(v) for v in entry["bbox"])
        score = float(entry["stability_score"])
        pred_iou = entry.get("predicted_iou")
        pred_iou = None if pred_iou is None else float(pred_iou)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"segment {seg_id}: malformed entry: {exc}") from exc

    if rle.size != (height, width):
        raise InvariantViolation(
            f"segment {seg_id}: rle size {rle.size} != image {height}x{width}"
        )
    try:
        bitmap = decode_rle(rle)
    except MalformedRle as exc:
        raise InvariantViolation(f"segment {seg_id}: {exc}") from exc
    if not (0.0 <= score <= 1.0):
        raise InvariantViolation(f"segment {seg_id}: stability_score {score} outside [0, 1]")
    if pred_iou is not None and not (0.0 <= pred_iou <= 1.0):
        raise InvariantViolation(f"segment {seg_id}: predicted_iou {pred_iou} outside [0, 1]")
    actual_area = int(np.count_nonzero(bitmap))
    if area != actual_area:
        raise InvariantViolation(
            f"segment {seg_id}: declared area {area} != decoded area {actual_area}"
        )
    actual_bbox = bbox_of(bitmap)
    if len(bbox) != 4 or tuple(bbox) != actual_bbox:
        raise InvariantViolation(
            f"segment {seg_id}: declared bbox {bbox} != tight bbox {actual_bbox}"
        )
    return Mask(id=seg_id, bitmap=bitmap, stability_score=score, predicted_iou=pred_iou)


def load_segments(path: str | Path) -> SegmentSet:
    """Read and validate a segments file, naming the offending segment on failure."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read segments file {path}: {exc}") from exc
    try:
        image_ref = str(raw["image"])
        width = int(raw["width"])
        height = int(raw["height"])
        entries = raw["segments"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"segments file {path} malformed: {exc}") from exc
    if width <= 0 or height <= 0:
        raise InvariantViolation(f"segments file {path}: non-positive image size")
    segments = tuple(_validate_segment(e, (width, height)) for e in entries)
    ids = [s.id for s in segments]
    if len(set(ids)) != len(ids):
        raise InvariantViolation(f"segments file {path}: duplicate segment ids")
    return SegmentSet(image_ref=image_ref, image_size=(width, height), segments=segments)


def save_segments(segment_set: SegmentSet, path: str | Path) -> None:
    """Write the canonical segments file; inverse of load_segments."""
    width, height = segment_set.image_size
    payload = {
        "image": segment_set.image_ref,
        "width": width,
        "height": height,
        "segments": [
            {
                "id": seg.id,
                "rle": {"size": [seg.height, seg.width], "counts": list(seg.to_rle().counts)},
                "area": seg.area,
                "bbox": list(seg.bbox),
                "stability_score": seg.stability_score,
                "predicted_iou": seg.predicted_iou,
            }
            for seg in segment_set.segments
        ],
    }
    Path(path).write_text(
        json.dumps(payload, separators=(",", ":")) + "\n", encoding="utf-8"
    )


def run_segmenter_adapter(
    command: str,
    image_ref: str | Path,
    image_size: tuple[int, int],
    spec: GridPromptSpec | None = None,
    *,
    tmp_root: str | Path | None = None,
    timeout: float | None = None,
) -> SegmentSet:
    """Invoke an external segmenter: command <request.json> <output-segments.json>.

    The request carries the image path, its size, the grid points, and the
    ambiguity fan-out, so external segmenters receive the standard prompt
    layout. Output is validated exactly as load_segments.
    """
    spec = spec or GridPromptSpec()
    width, height = image_size
    request = {
        "image": str(image_ref),
        "width": width,
        "height": height,
        "grid_points": [[x, y] for x, y in grid_points(spec, image_size)],
        "multimask_outputs": spec.multimask_outputs,
    }
    with tempfile.TemporaryDirectory(dir=tmp_root, prefix="segment-") as tmp:
        request_path = Path(tmp) / "request.json"
        out_path = Path(tmp) / "segments.json"
        request_path.write_text(json.dumps(request), encoding="utf-8")
        argv = shlex.split(command) + [str(request_path), str(out_path)]
        try:
            proc = subprocess.run(argv, capture_output=True, timeout=timeout)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise AdapterFailure(f"segmenter {command!r} failed to run: {exc}") from exc
        if proc.returncode != 0 or not out_path.exists():
            raise AdapterFailure(
                f"segmenter {command!r} exited {proc.returncode}: "
                f"{proc.stderr.decode('utf-8', 'replace')[-2000:]}"
            )
        segment_set = load_segments(out_path)
    if segment_set.image_size != (width, height):
        raise InvariantViolation(
            f"segmenter returned size {segment_set.image_size}, requested {(width, height)}"
        )
    return segment_set


@dataclass(frozen=True)
class CropProvenance:
    mode: str
    bbox: tuple[int, int, int, int]


@dataclass(frozen=True, eq=False)
class SegmentCrop:
    """Square RGB raster of one segment, ready for the embedder."""

    segment_id: str
    pixels: np.ndarray  # (R, R, 3) uint8
    provenance: CropProvenance


def crop_for_embedding(
    image: np.ndarray,
    mask: Mask,
    mode: str = "masked-bbox",
    embed_resolution: int = DEFAULT_EMBED_RESOLUTION,
) -> SegmentCrop:
    """Cut the mask's tight box from the image and letterbox it to a square.

    masked-bbox (default) first paints pixels outside the mask mid-gray; bbox
    keeps the raw crop. Resampling is bilinear, aspect ratio is preserved, and
    padding is mid-gray.
    """
    if mode not in CROP_MODES:
        raise ValueError(f"unknown crop mode {mode!r}; expected one of {CROP_MODES}")
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("image must be an (H, W, 3) array")
    if img.shape[:2] != mask.bitmap.shape:
        raise DimensionMismatch(
            f"image is {img.shape[:2]}, mask {mask.id} is {mask.bitmap.shape}"
        )
    if mask.area == 0 or mask.bbox == EMPTY_BBOX:
        raise EmptyMask(f"mask {mask.id} has no set pixels")

    x, y, w, h = mask.bbox
    crop = np.array(img[y : y + h, x : x + w], dtype=np.uint8)
    if mode == "masked-bbox":
        region = mask.bitmap[y : y + h, x : x + w]
        crop = np.where(region[:, :, None], crop, np.uint8(GRAY_FILL[0]))

    scale = embed_resolution / max(w, h)
    new_w = max(1, round(w * scale))
    new_h = max(1, round(h * scale))
    if (new_w, new_h) != (w, h):
        resized = np.asarray(
            Image.fromarray(crop).resize((new_w, new_h), Image.BILINEAR), dtype=np.uint8
        )
    else:
        resized = crop
    canvas = np.full((embed_resolution, embed_resolution, 3), GRAY_FILL[0], dtype=np.uint8)
    off_x = (embed_resolution - new_w) // 2
    off_y = (embed_resolution - new_h) // 2
    canvas[off_y : off_y + new_h, off_x : off_x + new_w] = resized
    return SegmentCrop(
        segment_id=mask.id,
        pixels=canvas,
        provenance=CropProvenance(mode=mode, bbox=mask.bbox),
    )
