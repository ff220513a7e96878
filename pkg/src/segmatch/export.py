"""Turns labeled instances into train-ready datasets: COCO, YOLO, and VOC exports,
manifest bookkeeping, manual-label merging, and paired suppression-ablation variants.

All exports are deterministic: identical inputs produce byte-identical files.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml
from PIL import Image

from .errors import (
    ClassListMismatch,
    InvariantViolation,
    TooManyClasses,
    UnknownImage,
    UnnormalizableBox,
)
from .masks import Mask
from .nms import NmsConfig, mask_nms
from .polygons import (
    DEFAULT_EPSILON,
    FIDELITY_MIN_IOU,
    mask_to_polygons,
    polygon_fidelity,
)

EXPORT_FORMATS = ("coco", "yolo-det", "yolo-seg", "voc")
SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True, eq=False)
class LabeledInstance:
    """A kept mask bound to an export class index and its match confidence."""

    mask: Mask
    class_index: int
    similarity: float
    image_ref: str


@dataclass(frozen=True)
class DatasetManifest:
    """Dataset identity: class names in index order, split membership, provenance."""

    name: str
    class_names: tuple[str, ...]
    splits: dict[str, tuple[str, ...]]
    formats: tuple[str, ...] = ()
    provenance: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for split in SPLIT_NAMES:
            members = tuple(self.splits.get(split, ()))
            overlap = seen & set(members)
            if overlap:
                raise InvariantViolation(f"splits are not disjoint: {sorted(overlap)}")
            seen |= set(members)
        object.__setattr__(
            self,
            "splits",
            {split: tuple(self.splits.get(split, ())) for split in SPLIT_NAMES},
        )

    def split_of(self, image_ref: str) -> str | None:
        for split in SPLIT_NAMES:
            if image_ref in self.splits[split]:
                return split
        return None

    def ordered_images(self) -> list[str]:
        out: list[str] = []
        for split in SPLIT_NAMES:
            out.extend(self.splits[split])
        return out

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "classes": list(self.class_names),
            "splits": {split: list(self.splits[split]) for split in SPLIT_NAMES},
            "formats": list(self.formats),
            "provenance": self.provenance,
        }


@dataclass(eq=False)
class LabeledDataset:
    """Instances plus manifest and per-image sizes (width, height)."""

    manifest: DatasetManifest
    instances: list[LabeledInstance]
    image_sizes: dict[str, tuple[int, int]]

    def instances_by_image(self) -> dict[str, list[LabeledInstance]]:
        grouped: dict[str, list[LabeledInstance]] = {
            ref: [] for ref in self.manifest.ordered_images()
        }
        for inst in self.instances:
            if inst.image_ref not in grouped:
                raise UnknownImage(
                    f"instance references {inst.image_ref!r}, which is in no split"
                )
            grouped[inst.image_ref].append(inst)
        return grouped

    def size_of(self, image_ref: str) -> tuple[int, int]:
        try:
            return self.image_sizes[image_ref]
        except KeyError:
            raise UnknownImage(f"no recorded size for image {image_ref!r}") from None


class PolygonCache:
    """Memoizes polygonization per (image_ref, mask id) so the COCO and YOLO
    exporters share identical geometry, and collects fidelity violations."""

    def __init__(self, epsilon: float = DEFAULT_EPSILON, min_component_area: int = 4):
        self.epsilon = epsilon
        self.min_component_area = min_component_area
        self._store: dict[tuple[str, str], list[list[tuple[float, float]]]] = {}
        self.violations: list[dict] = []

    def polygons_for(self, inst: LabeledInstance) -> list[list[tuple[float, float]]]:
        key = (inst.image_ref, inst.mask.id)
        if key not in self._store:
            polygons = mask_to_polygons(
                inst.mask, epsilon=self.epsilon, min_component_area=self.min_component_area
            )
            fidelity = polygon_fidelity(inst.mask, polygons)
            if fidelity < FIDELITY_MIN_IOU:
                self.violations.append(
                    {
                        "image": inst.image_ref,
                        "mask_id": inst.mask.id,
                        "fidelity": fidelity,
                    }
                )
            self._store[key] = polygons
        return self._store[key]


def _format_norm(value: float) -> str:
    return f"{value:.6f}"


def export_yolo(
    dataset: LabeledDataset,
    task: str,
    out_dir: str | Path,
    polygon_cache: PolygonCache | None = None,
) -> Path:
    """Write YOLO label files plus data.yaml. task is 'detect' or 'segment'.

    Detect lines are `class cx cy w h`, segment lines are `class x1 y1 ...`,
    all normalized to [0, 1] at 6 decimal places, one line per polygon. Every
    split image gets a label file even when it has no instances.
    """
    if task not in ("detect", "segment"):
        raise ValueError(f"task must be 'detect' or 'segment', got {task!r}")
    out = Path(out_dir)
    cache = polygon_cache or PolygonCache()
    grouped = dataset.instances_by_image()

    for split in SPLIT_NAMES:
        split_dir = out / "labels" / split
        split_dir.mkdir(parents=True, exist_ok=True)
        for ref in dataset.manifest.splits[split]:
            width, height = dataset.size_of(ref)
            if width <= 0 or height <= 0:
                raise UnnormalizableBox(f"image {ref!r} has zero size")
            lines = []
            for inst in grouped[ref]:
                if task == "detect":
                    x, y, w, h = inst.mask.bbox
                    cx = (x + w / 2) / width
                    cy = (y + h / 2) / height
                    lines.append(
                        f"{inst.class_index} {_format_norm(cx)} {_format_norm(cy)} "
                        f"{_format_norm(w / width)} {_format_norm(h / height)}"
                    )
                else:
                    for poly in cache.polygons_for(inst):
                        coords = " ".join(
                            f"{_format_norm(px / width)} {_format_norm(py / height)}"
                            for px, py in poly
                        )
                        lines.append(f"{inst.class_index} {coords}")
            stem = Path(ref).stem
            label_path = split_dir / f"{stem}.txt"
            label_path.write_text(
                "".join(line + "\n" for line in lines), encoding="utf-8"
            )

    description = {
        "path": ".",
        "train": "labels/train",
        "val": "labels/val",
        "test": "labels/test",
        "names": {idx: name for idx, name in enumerate(dataset.manifest.class_names)},
        "task": task,
    }
    (out / "data.yaml").write_text(
        yaml.safe_dump(description, sort_keys=False), encoding="utf-8"
    )
    return out


def export_coco(
    dataset: LabeledDataset,
    out_path: str | Path,
    polygon_cache: PolygonCache | None = None,
) -> Path:
    """Write one COCO instances JSON with dense ids and deterministic ordering.

    Annotation `area` is the true mask pixel count, not the polygon area, since
    polygonization is lossy and area drives size buckets. Each annotation also
    carries its match confidence as `score` so self-evaluation has a ranking.
    """
    out = Path(out_path)
    cache = polygon_cache or PolygonCache()
    grouped = dataset.instances_by_image()

    images = []
    annotations = []
    image_id = 0
    ann_id = 0
    for ref in dataset.manifest.ordered_images():
        image_id += 1
        width, height = dataset.size_of(ref)
        images.append(
            {"id": image_id, "file_name": ref, "width": width, "height": height}
        )
        for inst in grouped[ref]:
            ann_id += 1
            polygons = cache.polygons_for(inst)
            segmentation = [
                [coord for point in poly for coord in point] for poly in polygons
            ]
            annotations.append(
                {
                    "id": ann_id,
                    "image_id": image_id,
                    "category_id": inst.class_index + 1,
                    "segmentation": segmentation,
                    "bbox": list(inst.mask.bbox),
                    "area": inst.mask.area,
                    "iscrowd": 0,
                    "score": inst.similarity,
                }
            )

    payload = {
        "images": images,
        "annotations": annotations,
        "categories": [
            {"id": idx + 1, "name": name}
            for idx, name in enumerate(dataset.manifest.class_names)
        ],
    }
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return out


def export_voc_semantic(dataset: LabeledDataset, out_dir: str | Path) -> Path:
    """Write one single-channel index PNG per image: 0 is background, class k
    paints k+1. Contested pixels go to the higher-similarity instance; ties to
    the lower class index."""
    if len(dataset.manifest.class_names) > 254:
        raise TooManyClasses(
            f"{len(dataset.manifest.class_names)} classes exceed the 254 the "
            "single-channel format can hold"
        )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grouped = dataset.instances_by_image()
    for ref in dataset.manifest.ordered_images():
        width, height = dataset.size_of(ref)
        canvas = np.zeros((height, width), dtype=np.uint8)
        # Paint in ascending priority so the last writer is the winner.
        ordered = sorted(
            grouped[ref], key=lambda inst: (inst.similarity, -inst.class_index)
        )
        for inst in ordered:
            canvas[inst.mask.bitmap] = inst.class_index + 1
        Image.fromarray(canvas, mode="L").save(out / f"{Path(ref).stem}.png")
    return out


def write_manifest(dataset: LabeledDataset, out_path: str | Path) -> Path:
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(
        json.dumps(dataset.manifest.to_json(), indent=2) + "\n", encoding="utf-8"
    )
    return out


def export_dataset(
    dataset: LabeledDataset,
    formats: tuple[str, ...],
    out_dir: str | Path,
    epsilon: float = DEFAULT_EPSILON,
    min_component_area: int = 4,
) -> dict[str, str]:
    """Run every requested exporter against one shared polygon cache and write
    the manifest plus a polygon-fidelity report alongside."""
    unknown = set(formats) - set(EXPORT_FORMATS)
    if unknown:
        raise ValueError(f"unknown export formats: {sorted(unknown)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache = PolygonCache(epsilon=epsilon, min_component_area=min_component_area)
    paths: dict[str, str] = {}
    if "coco" in formats:
        paths["coco"] = str(export_coco(dataset, out / "coco" / "instances.json", cache))
    if "yolo-det" in formats:
        paths["yolo-det"] = str(export_yolo(dataset, "detect", out / "yolo-det", cache))
    if "yolo-seg" in formats:
        paths["yolo-seg"] = str(export_yolo(dataset, "segment", out / "yolo-seg", cache))
    if "voc" in formats:
        paths["voc"] = str(export_voc_semantic(dataset, out / "voc"))
    paths["manifest"] = str(write_manifest(dataset, out / "manifest.json"))
    fidelity_report = {
        "min_iou": FIDELITY_MIN_IOU,
        "epsilon": cache.epsilon,
        "violations": cache.violations,
    }
    fidelity_path = out / "polygon_fidelity.json"
    fidelity_path.write_text(
        json.dumps(fidelity_report, indent=2) + "\n", encoding="utf-8"
    )
    paths["polygon_fidelity"] = str(fidelity_path)
    return paths


def labeled_dataset_from_coco(path: str | Path, name: str | None = None) -> LabeledDataset:
    """Ingest a COCO instances file as a labeled dataset, rasterizing polygons.

    Annotations without a score default to 1.0 (manual labels are certain).
    """
    from .evaluation import load_coco_dataset

    dataset, sizes = load_coco_dataset(path, want_masks=True)
    instances = [
        LabeledInstance(
            mask=inst.mask,
            class_index=inst.class_index,
            similarity=1.0 if inst.score is None else float(inst.score),
            image_ref=inst.image_ref,
        )
        for inst in dataset.instances
    ]
    manifest = DatasetManifest(
        name=name or Path(path).stem,
        class_names=dataset.class_names,
        splits={"train": dataset.image_refs},
        provenance={"source": Path(path).name},
    )
    return LabeledDataset(manifest=manifest, instances=instances, image_sizes=sizes)


def merge_manual(
    pseudo: LabeledDataset,
    manual: LabeledDataset,
    image_ids: list[str],
) -> LabeledDataset:
    """Replace pseudo labels with manual labels for the listed images.

    Both datasets must share the class list; every listed image must exist in
    the manual dataset. The merged manifest records the substitution set.
    """
    if pseudo.manifest.class_names != manual.manifest.class_names:
        raise ClassListMismatch(
            f"pseudo classes {pseudo.manifest.class_names} != "
            f"manual classes {manual.manifest.class_names}"
        )
    manual_images = set(manual.image_sizes) | set(manual.manifest.ordered_images())
    unknown = [ref for ref in image_ids if ref not in manual_images]
    if unknown:
        raise UnknownImage(f"images not present in the manual dataset: {unknown}")

    swap = set(image_ids)
    merged_instances = [
        inst for inst in pseudo.instances if inst.image_ref not in swap
    ] + [inst for inst in manual.instances if inst.image_ref in swap]

    provenance = dict(pseudo.manifest.provenance)
    provenance["manual_substitution"] = {
        "images": sorted(swap),
        "source": manual.manifest.name,
    }
    manifest = replace(pseudo.manifest, provenance=provenance)
    sizes = dict(pseudo.image_sizes)
    for ref in swap:
        sizes[ref] = manual.size_of(ref)
    return LabeledDataset(manifest=manifest, instances=merged_instances, image_sizes=sizes)


def ablation_variant(
    pre_nms: LabeledDataset,
    config: NmsConfig,
) -> tuple[LabeledDataset, LabeledDataset]:
    """Paired datasets from pre-suppression instances: (with NMS, without NMS).

    The two share one manifest lineage and differ only in whether suppression
    was applied per image.
    """
    kept_instances: list[LabeledInstance] = []
    for ref, insts in pre_nms.instances_by_image().items():
        outcome = mask_nms([inst.mask for inst in insts], config)
        kept_instances.extend(insts[k] for k in outcome.kept)

    base_provenance = dict(pre_nms.manifest.provenance)
    base_provenance["ablation"] = {
        "threshold": config.threshold,
        "min_area": config.min_area,
    }
    with_manifest = replace(
        pre_nms.manifest,
        name=f"{pre_nms.manifest.name}-with-nms",
        provenance={**base_provenance, "nms_applied": True},
    )
    without_manifest = replace(
        pre_nms.manifest,
        name=f"{pre_nms.manifest.name}-without-nms",
        provenance={**base_provenance, "nms_applied": False},
    )
    with_nms = LabeledDataset(
        manifest=with_manifest,
        instances=kept_instances,
        image_sizes=dict(pre_nms.image_sizes),
    )
    without_nms = LabeledDataset(
        manifest=without_manifest,
        instances=list(pre_nms.instances),
        image_sizes=dict(pre_nms.image_sizes),
    )
    return with_nms, without_nms
