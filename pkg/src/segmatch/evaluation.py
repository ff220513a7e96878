"""Detection metrics (COCO-style AP/AR) and semantic metrics (VOC-style).

Boxes and masks share one evaluator; the geometry kind is fixed per run.
Classes with no ground truth anywhere in the split are excluded from class
means, which matters on small fixtures and is therefore stated here.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ClassListMismatch,
    CrowdNotSupported,
    ParseError,
    SizeMismatch,
    UnsortedInput,
    ValueOutOfRange,
)
from .masks import Mask
from .polygons import rasterize_polygons

IOU_THRESHOLDS = (0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95)
MAX_DETECTIONS = 100
_RECALL_POINTS = np.array([k / 100.0 for k in range(101)])


@dataclass(frozen=True, eq=False)
class EvalInstance:
    """One ground-truth object or one detection (detections carry a score)."""

    image_ref: str
    class_index: int
    bbox: tuple[float, float, float, float]
    mask: Mask | None = None
    score: float | None = None


@dataclass(eq=False)
class EvalDataset:
    """Instances plus the class list and the ordered image universe."""

    class_names: tuple[str, ...]
    image_refs: tuple[str, ...]
    instances: list[EvalInstance]


def box_iou(a: tuple[float, ...], b: tuple[float, ...]) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = max(ax, bx)
    iy = max(ay, by)
    iw = max(0.0, min(ax + aw, bx + bw) - ix)
    ih = max(0.0, min(ay + ah, by + bh) - iy)
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def mask_iou(a: Mask, b: Mask) -> float:
    inter = int(np.count_nonzero(a.bitmap & b.bitmap))
    union = a.area + b.area - inter
    return inter / union if union else 0.0


def _instance_iou(det: EvalInstance, gt: EvalInstance, kind: str) -> float:
    if kind == "box":
        return box_iou(det.bbox, gt.bbox)
    if det.mask is None or gt.mask is None:
        raise ValueError("mask-kind evaluation requires masks on every instance")
    return mask_iou(det.mask, gt.mask)


def _check_sorted(scores: list[float]) -> None:
    for earlier, later in zip(scores, scores[1:]):
        if later > earlier:
            raise UnsortedInput("detections must be sorted by descending score")


def _greedy_from_matrix(iou_matrix: np.ndarray, threshold: float) -> list[bool]:
    """Each detection (row order = score order) takes the unmatched ground
    truth with the highest IoU >= threshold; ties go to the first."""
    num_det, num_gt = iou_matrix.shape
    taken = [False] * num_gt
    flags = []
    for d in range(num_det):
        best_iou = -1.0
        best_g = -1
        for g in range(num_gt):
            if taken[g]:
                continue
            iou = iou_matrix[d, g]
            if iou >= threshold and iou > best_iou:
                best_iou = iou
                best_g = g
        if best_g >= 0:
            taken[best_g] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags


def match_greedy(
    gts: list[EvalInstance],
    dets: list[EvalInstance],
    iou_threshold: float,
    kind: str = "box",
) -> list[bool]:
    """TP/FP flags for detections already sorted by descending score."""
    _check_sorted([float(d.score or 0.0) for d in dets])
    matrix = np.array(
        [[_instance_iou(d, g, kind) for g in gts] for d in dets], dtype=np.float64
    ).reshape(len(dets), len(gts))
    return _greedy_from_matrix(matrix, iou_threshold)


def average_precision(tp_flags: list[bool], scores: list[float], num_gt: int) -> float:
    """101-point interpolated AP over flags aligned with score-sorted detections."""
    _check_sorted(list(scores))
    if num_gt <= 0 or not tp_flags:
        return 0.0
    flags = np.asarray(tp_flags, dtype=np.float64)
    tp = np.cumsum(flags)
    fp = np.cumsum(1.0 - flags)
    recall = tp / num_gt
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, _RECALL_POINTS, side="left")
    values = np.where(
        idx < len(recall), envelope[np.minimum(idx, len(recall) - 1)], 0.0
    )
    return float(values.mean())


@dataclass
class EvalReport:
    """AP/AR bundle with per-class breakdown and the settings that produced it."""

    kind: str
    class_names: tuple[str, ...]
    iou_thresholds: tuple[float, ...]
    per_class_ap: dict[int, list[float]]
    per_class_recall: dict[int, list[float]]
    map50: float
    map5095: float
    mar5095: float
    counts: dict[str, int] = field(default_factory=dict)
    settings: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "class_names": list(self.class_names),
            "iou_thresholds": list(self.iou_thresholds),
            "per_class_ap": {str(k): v for k, v in sorted(self.per_class_ap.items())},
            "per_class_recall": {
                str(k): v for k, v in sorted(self.per_class_recall.items())
            },
            "mAP50": self.map50,
            "mAP50_95": self.map5095,
            "mAR50_95": self.mar5095,
            "counts": self.counts,
            "settings": self.settings,
        }

    def to_table(self) -> str:
        header = f"{'class':<24} {'AP50':>8} {'AP50:95':>8} {'AR50:95':>8}"
        lines = [header, "-" * len(header)]
        for idx in sorted(self.per_class_ap):
            aps = self.per_class_ap[idx]
            recalls = self.per_class_recall[idx]
            lines.append(
                f"{self.class_names[idx]:<24} {aps[0]:>8.4f} "
                f"{float(np.mean(aps)):>8.4f} {float(np.mean(recalls)):>8.4f}"
            )
        lines.append("-" * len(header))
        lines.append(
            f"{'all':<24} {self.map50:>8.4f} {self.map5095:>8.4f} {self.mar5095:>8.4f}"
        )
        return "\n".join(lines)


def coco_eval(gt: EvalDataset, det: EvalDataset, kind: str = "box") -> EvalReport:
    """AP per class per IoU threshold in 0.50:0.05:0.95, plus mAP50, mAP50:95,
    and mAR50:95 at up to MAX_DETECTIONS highest-score detections per image."""
    if kind not in ("box", "mask"):
        raise ValueError(f"kind must be 'box' or 'mask', got {kind!r}")
    if gt.class_names != det.class_names:
        raise ClassListMismatch(
            f"ground truth classes {gt.class_names} != detection classes {det.class_names}"
        )
    images = gt.image_refs
    num_classes = len(gt.class_names)

    gt_by: dict[str, dict[int, list[EvalInstance]]] = {img: {} for img in images}
    for inst in gt.instances:
        gt_by[inst.image_ref].setdefault(inst.class_index, []).append(inst)
    det_by: dict[str, dict[int, list[EvalInstance]]] = {img: {} for img in images}
    for inst in det.instances:
        if inst.image_ref in det_by:
            det_by[inst.image_ref].setdefault(inst.class_index, []).append(inst)

    per_class_ap: dict[int, list[float]] = {}
    per_class_recall: dict[int, list[float]] = {}
    tp50 = fp50 = gt_total = 0

    for cls in range(num_classes):
        num_gt = sum(len(gt_by[img].get(cls, [])) for img in images)
        if num_gt == 0:
            continue
        gt_total += num_gt

        # Per image: detections stably sorted by descending score, capped, and
        # the IoU matrix computed once and reused across thresholds.
        prepared = []
        for img in images:
            dets = det_by[img].get(cls, [])
            order = sorted(
                range(len(dets)), key=lambda k: -float(dets[k].score or 0.0)
            )
            dets = [dets[k] for k in order][:MAX_DETECTIONS]
            gts = gt_by[img].get(cls, [])
            matrix = np.array(
                [[_instance_iou(d, g, kind) for g in gts] for d in dets],
                dtype=np.float64,
            ).reshape(len(dets), len(gts))
            prepared.append((dets, matrix))

        aps = []
        recalls = []
        for t_idx, threshold in enumerate(IOU_THRESHOLDS):
            scores: list[float] = []
            flags: list[bool] = []
            for dets, matrix in prepared:
                image_flags = _greedy_from_matrix(matrix, threshold)
                scores.extend(float(d.score or 0.0) for d in dets)
                flags.extend(image_flags)
            order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
            sorted_flags = [flags[k] for k in order]
            sorted_scores = [scores[k] for k in order]
            aps.append(average_precision(sorted_flags, sorted_scores, num_gt))
            recalls.append(sum(flags) / num_gt)
            if t_idx == 0:
                tp50 += sum(flags)
                fp50 += len(flags) - sum(flags)
        per_class_ap[cls] = aps
        per_class_recall[cls] = recalls

    if per_class_ap:
        map50 = float(np.mean([aps[0] for aps in per_class_ap.values()]))
        map5095 = float(np.mean([np.mean(aps) for aps in per_class_ap.values()]))
        mar5095 = float(np.mean([np.mean(r) for r in per_class_recall.values()]))
    else:
        map50 = map5095 = mar5095 = 0.0

    return EvalReport(
        kind=kind,
        class_names=gt.class_names,
        iou_thresholds=IOU_THRESHOLDS,
        per_class_ap=per_class_ap,
        per_class_recall=per_class_recall,
        map50=map50,
        map5095=map5095,
        mar5095=mar5095,
        counts={"num_gt": gt_total, "tp_at_50": tp50, "fp_at_50": fp50},
        settings={
            "kind": kind,
            "max_detections": MAX_DETECTIONS,
            "iou_thresholds": list(IOU_THRESHOLDS),
            "absent_classes_excluded": True,
        },
    )


@dataclass
class SemanticReport:
    """Confusion-matrix bundle for semantic maps (class 0 is background)."""

    confusion: np.ndarray
    class_accuracy: float
    miou: float
    fwiou: float
    per_class: dict[int, dict[str, float]]
    include_background: bool

    def to_json(self) -> dict:
        return {
            "confusion": self.confusion.tolist(),
            "class_accuracy": self.class_accuracy,
            "mIoU": self.miou,
            "FWIoU": self.fwiou,
            "per_class": {str(k): v for k, v in sorted(self.per_class.items())},
            "include_background": self.include_background,
        }

    def to_table(self) -> str:
        header = f"{'class':<10} {'acc':>8} {'IoU':>8}"
        lines = [header, "-" * len(header)]
        for idx in sorted(self.per_class):
            entry = self.per_class[idx]
            lines.append(f"{idx:<10} {entry['accuracy']:>8.4f} {entry['iou']:>8.4f}")
        lines.append("-" * len(header))
        lines.append(
            f"classAcc {self.class_accuracy:.4f}  mIoU {self.miou:.4f}  "
            f"FWIoU {self.fwiou:.4f}"
        )
        return "\n".join(lines)


def voc_eval(
    gt_maps: list[np.ndarray],
    pred_maps: list[np.ndarray],
    num_classes: int,
    include_background: bool = False,
) -> SemanticReport:
    """Pixel confusion matrix over (num_classes + 1) values including background.

    Background (value 0) always participates in FWIoU weighting but is
    excluded from class_accuracy and mIoU unless include_background is set.
    Class means run over classes present in the ground truth.
    """
    if len(gt_maps) != len(pred_maps):
        raise SizeMismatch(f"{len(gt_maps)} ground-truth maps vs {len(pred_maps)} predictions")
    n = num_classes + 1
    confusion = np.zeros((n, n), dtype=np.int64)
    for idx, (gt_map, pred_map) in enumerate(zip(gt_maps, pred_maps)):
        gt_arr = np.asarray(gt_map, dtype=np.int64)
        pred_arr = np.asarray(pred_map, dtype=np.int64)
        if gt_arr.shape != pred_arr.shape:
            raise SizeMismatch(
                f"map {idx}: ground truth {gt_arr.shape} vs prediction {pred_arr.shape}"
            )
        for name, arr in (("ground truth", gt_arr), ("prediction", pred_arr)):
            if arr.size and (arr.min() < 0 or arr.max() > num_classes):
                raise ValueOutOfRange(
                    f"map {idx}: {name} values outside [0, {num_classes}]"
                )
        confusion += np.bincount(
            (gt_arr.ravel() * n + pred_arr.ravel()), minlength=n * n
        ).reshape(n, n)

    row = confusion.sum(axis=1)
    col = confusion.sum(axis=0)
    diag = np.diag(confusion)
    total = int(confusion.sum())

    accuracy = np.zeros(n, dtype=np.float64)
    iou = np.zeros(n, dtype=np.float64)
    for k in range(n):
        if row[k] > 0:
            accuracy[k] = diag[k] / row[k]
        denom = row[k] + col[k] - diag[k]
        if denom > 0:
            iou[k] = diag[k] / denom

    first = 0 if include_background else 1
    present = [k for k in range(first, n) if row[k] > 0]
    class_accuracy = float(np.mean(accuracy[present])) if present else 0.0
    miou = float(np.mean(iou[present])) if present else 0.0
    fwiou = float(
        sum((row[k] / total) * iou[k] for k in range(n) if row[k] > 0)
    ) if total else 0.0

    per_class = {
        k: {"accuracy": float(accuracy[k]), "iou": float(iou[k])}
        for k in range(first, n)
        if row[k] > 0
    }
    return SemanticReport(
        confusion=confusion,
        class_accuracy=class_accuracy,
        miou=miou,
        fwiou=fwiou,
        per_class=per_class,
        include_background=include_background,
    )


def load_semantic_map(path: str | Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.int64)


def load_coco_dataset(
    path: str | Path, want_masks: bool = True
) -> tuple[EvalDataset, dict[str, tuple[int, int]]]:
    """Parse a COCO instances file into an EvalDataset.

    Detections reuse the same schema with an extra per-annotation "score"
    (1.0 when absent). Crowd annotations are rejected. Masks are rasterized
    from the polygon segmentation when want_masks is set.
    """
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read COCO file {path}: {exc}") from exc

    try:
        images = {int(img["id"]): img for img in raw["images"]}
        categories = sorted(raw["categories"], key=lambda c: int(c["id"]))
        annotations = raw.get("annotations", [])
    except (KeyError, TypeError) as exc:
        raise ParseError(f"COCO file {path} malformed: {exc}") from exc

    class_names = tuple(str(c["name"]) for c in categories)
    class_of_category = {int(c["id"]): idx for idx, c in enumerate(categories)}
    image_refs = tuple(str(img["file_name"]) for img in raw["images"])
    image_sizes = {
        str(img["file_name"]): (int(img["width"]), int(img["height"]))
        for img in raw["images"]
    }

    instances = []
    for ann in annotations:
        if int(ann.get("iscrowd", 0)) == 1:
            raise CrowdNotSupported(
                f"annotation {ann.get('id')} has iscrowd=1, which is not supported"
            )
        img = images.get(int(ann["image_id"]))
        if img is None:
            raise ParseError(f"annotation {ann.get('id')} references unknown image")
        ref = str(img["file_name"])
        bbox = tuple(float(v) for v in ann["bbox"])
        mask = None
        if want_masks:
            segmentation = ann.get("segmentation") or []
            polygons = [
                list(zip(flat[0::2], flat[1::2])) for flat in segmentation if len(flat) >= 6
            ]
            bitmap = rasterize_polygons(
                polygons, int(img["height"]), int(img["width"])
            )
            mask = Mask(id=f"ann-{ann.get('id')}", bitmap=bitmap)
        score = ann.get("score")
        instances.append(
            EvalInstance(
                image_ref=ref,
                class_index=class_of_category[int(ann["category_id"])],
                bbox=bbox,  # type: ignore[arg-type]
                mask=mask,
                score=None if score is None else float(score),
            )
        )
    return (
        EvalDataset(class_names=class_names, image_refs=image_refs, instances=instances),
        image_sizes,
    )
