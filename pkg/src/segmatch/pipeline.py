"""Batch orchestration: segments -> suppression -> crops -> embeddings -> matching
-> exports -> optional evaluation, over an image directory.

Images are processed by a worker pool but every artifact is assembled by an
ordered reduce over sorted image names, so worker count never changes output
bytes. Per-image failures are isolated and reported; the batch never aborts
unless nothing succeeds.
"""
from __future__ import annotations

import json
import os
import statistics
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from hashlib import sha256
from pathlib import Path
from threading import Lock

import numpy as np
from PIL import Image

from . import __version__
from .errors import ConfigError, IdMismatch
from .evaluation import coco_eval, load_coco_dataset
from .export import (
    EXPORT_FORMATS,
    DatasetManifest,
    LabeledDataset,
    LabeledInstance,
    export_dataset,
)
from .ingest import (
    CROP_MODES,
    DEFAULT_EMBED_RESOLUTION,
    GridPromptSpec,
    SegmentSet,
    crop_for_embedding,
    load_segments,
    run_segmenter_adapter,
    save_segments,
)
from .masks import Mask, RunLength, decode_rle
from .matching import (
    EmbeddingBlock,
    Prompt,
    assign_labels,
    load_prompts,
    normalize_rows,
    prompts_digest,
    read_embeddings,
    run_embedder_adapter,
    similarity_matrix,
)
from .nms import NmsConfig, filter_min_area, mask_nms

CACHE_DIR_ENV = "SEGMATCH_CACHE_DIR"
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "segmatch pipeline configuration",
    "type": "object",
    "properties": {
        "images_dir": {"type": "string", "description": "Directory of input images."},
        "segments": {
            "type": "object",
            "description": "Exactly one of dir (precomputed <stem>.json segments files) or command (segmenter adapter).",
            "properties": {
                "dir": {"type": "string"},
                "command": {"type": "string"},
            },
        },
        "embeddings": {
            "type": "object",
            "description": "Exactly one of dir (precomputed <stem>.embeddings plus prompts.embeddings) or command (embedder adapter).",
            "properties": {
                "dir": {"type": "string"},
                "command": {"type": "string"},
            },
        },
        "prompts": {"type": "string", "description": "Prompt file path."},
        "grid": {
            "type": "object",
            "properties": {
                "points_per_side": {"type": "integer", "default": 32},
                "multimask_outputs": {"type": "integer", "enum": [1, 3], "default": 3},
            },
        },
        "nms": {
            "type": "object",
            "properties": {
                "enabled": {"type": "boolean", "default": True},
                "threshold": {"type": "number", "default": 0.9},
                "min_area": {"type": "integer", "default": 0},
            },
        },
        "crop": {
            "type": "object",
            "properties": {
                "mode": {"type": "string", "enum": list(CROP_MODES), "default": "masked-bbox"},
                "resolution": {"type": "integer", "default": DEFAULT_EMBED_RESOLUTION},
            },
        },
        "export": {
            "type": "object",
            "properties": {
                "formats": {
                    "type": "array",
                    "items": {"type": "string", "enum": list(EXPORT_FORMATS)},
                    "default": ["coco"],
                },
                "dataset_name": {"type": "string", "default": "dataset"},
                "polygon_epsilon": {"type": "number", "default": 0.5},
                "min_component_area": {"type": "integer", "default": 4},
            },
        },
        "splits": {
            "type": "object",
            "description": "Optional explicit split membership; everything defaults to train.",
            "properties": {
                "train": {"type": "array", "items": {"type": "string"}},
                "val": {"type": "array", "items": {"type": "string"}},
                "test": {"type": "array", "items": {"type": "string"}},
            },
        },
        "similarity_floor": {
            "type": ["number", "null"],
            "description": "Optional: assignments below this cosine go to floor_class_index.",
        },
        "floor_class_index": {"type": ["integer", "null"]},
        "workers": {"type": "integer", "default": 1},
        "cache_dir": {
            "type": ["string", "null"],
            "description": f"Embedding/segment cache; ${CACHE_DIR_ENV} overrides.",
        },
        "seed": {"type": "integer", "default": 0},
        "gt": {"type": ["string", "null"], "description": "COCO ground truth enabling evaluation."},
        "out_dir": {"type": "string"},
    },
    "required": ["images_dir", "segments", "embeddings", "prompts", "out_dir"],
}


@dataclass
class PipelineConfig:
    images_dir: Path
    prompts_path: Path
    out_dir: Path
    segments_dir: Path | None = None
    segmenter_command: str | None = None
    embeddings_dir: Path | None = None
    embedder_command: str | None = None
    grid: GridPromptSpec = field(default_factory=GridPromptSpec)
    nms: NmsConfig = field(default_factory=NmsConfig)
    nms_enabled: bool = True
    crop_mode: str = "masked-bbox"
    embed_resolution: int = DEFAULT_EMBED_RESOLUTION
    formats: tuple[str, ...] = ("coco",)
    dataset_name: str = "dataset"
    polygon_epsilon: float = 0.5
    min_component_area: int = 4
    splits: dict[str, list[str]] | None = None
    similarity_floor: float | None = None
    floor_class_index: int | None = None
    workers: int = 1
    cache_dir: Path | None = None
    seed: int = 0
    gt_path: Path | None = None

    def validate(self) -> None:
        if (self.segments_dir is None) == (self.segmenter_command is None):
            raise ConfigError("configure exactly one segments source: dir or command")
        if (self.embeddings_dir is None) == (self.embedder_command is None):
            raise ConfigError("configure exactly one embeddings source: dir or command")
        if self.crop_mode not in CROP_MODES:
            raise ConfigError(f"crop mode must be one of {CROP_MODES}")
        unknown = set(self.formats) - set(EXPORT_FORMATS)
        if unknown:
            raise ConfigError(f"unknown export formats: {sorted(unknown)}")
        if (self.similarity_floor is None) != (self.floor_class_index is None):
            raise ConfigError(
                "similarity_floor and floor_class_index must be set together"
            )
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not self.images_dir.is_dir():
            raise ConfigError(f"images dir {self.images_dir} does not exist")

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path | None = None) -> "PipelineConfig":
        base = base_dir or Path.cwd()

        def _path(value: str | None) -> Path | None:
            if value is None:
                return None
            p = Path(value)
            return p if p.is_absolute() else base / p

        segments = raw.get("segments", {}) or {}
        embeddings = raw.get("embeddings", {}) or {}
        grid = raw.get("grid", {}) or {}
        nms = raw.get("nms", {}) or {}
        crop = raw.get("crop", {}) or {}
        export = raw.get("export", {}) or {}
        try:
            config = cls(
                images_dir=_path(raw["images_dir"]),
                prompts_path=_path(raw["prompts"]),
                out_dir=_path(raw.get("out_dir", "out")),
                segments_dir=_path(segments.get("dir")),
                segmenter_command=segments.get("command"),
                embeddings_dir=_path(embeddings.get("dir")),
                embedder_command=embeddings.get("command"),
                grid=GridPromptSpec(
                    points_per_side=int(grid.get("points_per_side", 32)),
                    multimask_outputs=int(grid.get("multimask_outputs", 3)),
                ),
                nms=NmsConfig(
                    threshold=float(nms.get("threshold", 0.9)),
                    min_area=int(nms.get("min_area", 0)),
                ),
                nms_enabled=bool(nms.get("enabled", True)),
                crop_mode=str(crop.get("mode", "masked-bbox")),
                embed_resolution=int(crop.get("resolution", DEFAULT_EMBED_RESOLUTION)),
                formats=tuple(export.get("formats", ["coco"])),
                dataset_name=str(export.get("dataset_name", "dataset")),
                polygon_epsilon=float(export.get("polygon_epsilon", 0.5)),
                min_component_area=int(export.get("min_component_area", 4)),
                splits=raw.get("splits"),
                similarity_floor=raw.get("similarity_floor"),
                floor_class_index=raw.get("floor_class_index"),
                workers=int(raw.get("workers", 1)),
                cache_dir=_path(raw.get("cache_dir")),
                seed=int(raw.get("seed", 0)),
                gt_path=_path(raw.get("gt")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad pipeline configuration: {exc}") from exc
        env_cache = os.environ.get(CACHE_DIR_ENV)
        if env_cache:
            config.cache_dir = Path(env_cache)
        return config

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(raw, base_dir=Path(path).resolve().parent)

    def result_digest(self, prompts: list[Prompt]) -> str:
        """Digest over every field that can change output bytes. Worker count,
        cache location, and directory paths are deliberately excluded."""
        payload = {
            "engine_version": __version__,
            "prompts": prompts_digest(prompts),
            "grid": [self.grid.points_per_side, self.grid.multimask_outputs],
            "nms": [self.nms_enabled, self.nms.threshold, self.nms.min_area],
            "crop": [self.crop_mode, self.embed_resolution],
            "formats": list(self.formats),
            "dataset_name": self.dataset_name,
            "polygon": [self.polygon_epsilon, self.min_component_area],
            "floor": [self.similarity_floor, self.floor_class_index],
            "segmenter": self.segmenter_command,
            "embedder": self.embedder_command,
            "seed": self.seed,
        }
        return sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()


class EmbeddingCache:
    """Content-addressed vector cache. Keys hash the adapter identity plus the
    exact input bytes, so prompt edits invalidate text embeddings while image
    and segment caches stay warm."""

    def __init__(self, root: Path | None):
        self.root = root
        self._lock = Lock()
        if root is not None:
            (root / "vectors").mkdir(parents=True, exist_ok=True)

    @staticmethod
    def text_key(command: str, description: str) -> str:
        return sha256(f"text|{command}|{description}".encode("utf-8")).hexdigest()

    @staticmethod
    def raster_key(command: str, raster: np.ndarray) -> str:
        digest = sha256()
        digest.update(f"raster|{command}|{raster.shape}|".encode("utf-8"))
        digest.update(raster.tobytes())
        return digest.hexdigest()

    def get(self, key: str) -> np.ndarray | None:
        if self.root is None:
            return None
        path = self.root / "vectors" / f"{key}.npy"
        if not path.exists():
            return None
        return np.load(path)

    def put(self, key: str, vector: np.ndarray) -> None:
        if self.root is None:
            return
        path = self.root / "vectors" / f"{key}.npy"
        if path.exists():
            return
        with self._lock:
            tmp = path.with_suffix(".tmp.npy")
            np.save(tmp, vector.astype(np.float32))
            tmp.replace(path)


@dataclass
class ImageRecord:
    image: str
    ok: bool
    error: str | None = None
    stage: str | None = None
    stage_seconds: dict[str, float] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    no_exported_instances: bool = False


@dataclass
class RunRecord:
    config_digest: str
    images: list[ImageRecord]
    stage_totals: dict[str, float] = field(default_factory=dict)
    export_seconds: float = 0.0
    eval_seconds: float = 0.0

    @property
    def succeeded(self) -> int:
        return sum(1 for rec in self.images if rec.ok)

    @property
    def failed(self) -> int:
        return sum(1 for rec in self.images if not rec.ok)

    def to_json(self) -> dict:
        return {
            "config_digest": self.config_digest,
            "succeeded": self.succeeded,
            "failed": self.failed,
            "stage_totals": self.stage_totals,
            "export_seconds": self.export_seconds,
            "eval_seconds": self.eval_seconds,
            "images": [
                {
                    "image": rec.image,
                    "ok": rec.ok,
                    "error": rec.error,
                    "stage": rec.stage,
                    "stage_seconds": rec.stage_seconds,
                    "counts": rec.counts,
                    "no_exported_instances": rec.no_exported_instances,
                }
                for rec in self.images
            ],
        }


def discover_images(images_dir: Path) -> list[str]:
    names = [
        p.name
        for p in images_dir.iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    ]
    return sorted(names)


class _Stopwatch:
    def __init__(self, record: ImageRecord):
        self.record = record
        self.stage = None
        self.started = 0.0

    def start(self, stage: str) -> None:
        self.stage = stage
        self.record.stage = stage
        self.started = time.perf_counter()

    def stop(self) -> None:
        if self.stage is None:
            return
        self.record.stage_seconds[self.stage] = (
            self.record.stage_seconds.get(self.stage, 0.0)
            + time.perf_counter()
            - self.started
        )
        self.stage = None


def _obtain_segments(config: PipelineConfig, ref: str, cache: EmbeddingCache) -> SegmentSet:
    if config.segments_dir is not None:
        path = config.segments_dir / f"{Path(ref).stem}.json"
        return load_segments(path)
    image_path = config.images_dir / ref
    with Image.open(image_path) as img:
        size = img.size
    if cache.root is not None:
        key_src = sha256()
        key_src.update(f"segments|{config.segmenter_command}|".encode("utf-8"))
        key_src.update(
            json.dumps(
                [config.grid.points_per_side, config.grid.multimask_outputs]
            ).encode("utf-8")
        )
        key_src.update(image_path.read_bytes())
        cached_path = cache.root / "segments" / f"{key_src.hexdigest()}.json"
        if cached_path.exists():
            return load_segments(cached_path)
        segment_set = run_segmenter_adapter(
            config.segmenter_command, image_path, size, config.grid
        )
        cached_path.parent.mkdir(parents=True, exist_ok=True)
        save_segments(segment_set, cached_path)
        return segment_set
    return run_segmenter_adapter(config.segmenter_command, image_path, size, config.grid)


def _embed_crops(
    config: PipelineConfig,
    ref: str,
    crops: list,
    cache: EmbeddingCache,
) -> EmbeddingBlock:
    ids = [crop.segment_id for crop in crops]
    if config.embeddings_dir is not None:
        block = read_embeddings(config.embeddings_dir / f"{Path(ref).stem}.embeddings")
        missing = [i for i in ids if i not in set(block.ids)]
        if missing:
            raise IdMismatch(f"precomputed embeddings for {ref} lack ids {missing}")
        index = {seg_id: k for k, seg_id in enumerate(block.ids)}
        rows = block.vectors[[index[i] for i in ids]]
        return EmbeddingBlock(ids=tuple(ids), vectors=rows)

    command = config.embedder_command
    keys = [EmbeddingCache.raster_key(command, crop.pixels) for crop in crops]
    vectors: dict[str, np.ndarray] = {}
    missing = []
    for crop, key in zip(crops, keys):
        hit = cache.get(key)
        if hit is None:
            missing.append((crop, key))
        else:
            vectors[crop.segment_id] = hit
    if missing:
        with tempfile.TemporaryDirectory(prefix="crops-") as tmp:
            items = []
            for crop, _ in missing:
                path = Path(tmp) / f"{crop.segment_id}.png"
                Image.fromarray(crop.pixels).save(path)
                items.append((crop.segment_id, str(path)))
            block = run_embedder_adapter(command, images=items)
        for (crop, key), row in zip(missing, block.vectors):
            vectors[crop.segment_id] = row
            cache.put(key, row)
    dim = len(next(iter(vectors.values())))
    rows = np.stack([vectors[i] for i in ids]) if ids else np.zeros((0, dim), np.float32)
    return EmbeddingBlock(ids=tuple(ids), vectors=rows)


def _embed_prompts(
    config: PipelineConfig, prompts: list[Prompt], cache: EmbeddingCache
) -> EmbeddingBlock:
    descriptions = [p.description for p in prompts]
    if config.embeddings_dir is not None:
        block = read_embeddings(config.embeddings_dir / "prompts.embeddings")
        index = {desc: k for k, desc in enumerate(block.ids)}
        missing = [d for d in descriptions if d not in index]
        if missing:
            raise IdMismatch(f"prompts.embeddings lacks descriptions {missing}")
        rows = block.vectors[[index[d] for d in descriptions]]
        return EmbeddingBlock(ids=tuple(descriptions), vectors=rows)

    command = config.embedder_command
    vectors: dict[str, np.ndarray] = {}
    missing = []
    for desc in descriptions:
        hit = cache.get(EmbeddingCache.text_key(command, desc))
        if hit is None:
            missing.append(desc)
        else:
            vectors[desc] = hit
    if missing:
        unique = list(dict.fromkeys(missing))
        block = run_embedder_adapter(command, texts=[(d, d) for d in unique])
        for desc, row in zip(unique, block.vectors):
            vectors[desc] = row
            cache.put(EmbeddingCache.text_key(command, desc), row)
    rows = np.stack([vectors[d] for d in descriptions])
    return EmbeddingBlock(ids=tuple(descriptions), vectors=rows)


def match_segments(
    segment_block: EmbeddingBlock,
    text_block: EmbeddingBlock,
    similarity_floor: float | None = None,
    floor_class_index: int | None = None,
):
    """Normalize, compute similarities, argmax, and apply the optional floor."""
    matrix = similarity_matrix(normalize_rows(segment_block), normalize_rows(text_block))
    assignments = assign_labels(matrix)
    if similarity_floor is not None:
        from dataclasses import replace as dc_replace

        assignments = [
            dc_replace(a, class_index=floor_class_index)
            if a.similarity < similarity_floor
            else a
            for a in assignments
        ]
    return matrix, assignments


def _process_image(
    config: PipelineConfig,
    ref: str,
    prompt_block: EmbeddingBlock,
    cache: EmbeddingCache,
) -> tuple[ImageRecord, dict | None]:
    record = ImageRecord(image=ref, ok=False)
    watch = _Stopwatch(record)
    try:
        watch.start("segments")
        segment_set = _obtain_segments(config, ref, cache)
        watch.stop()
        record.counts["raw_masks"] = len(segment_set.segments)

        watch.start("nms")
        masks = filter_min_area(list(segment_set.segments), config.nms.min_area)
        record.counts["post_min_area"] = len(masks)
        if config.nms_enabled:
            outcome = mask_nms(masks, config.nms)
            kept = [masks[k] for k in outcome.kept]
        else:
            kept = masks
        # Area-0 masks are legal values but cannot be cropped or labeled.
        kept = [m for m in kept if m.area > 0]
        watch.stop()
        record.counts["post_nms"] = len(kept)

        watch.start("crop")
        crops = []
        if kept:
            with Image.open(config.images_dir / ref) as img:
                pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
            crops = [
                crop_for_embedding(pixels, m, config.crop_mode, config.embed_resolution)
                for m in kept
            ]
        watch.stop()

        watch.start("embed")
        segments_payload = []
        if crops:
            segment_block = _embed_crops(config, ref, crops, cache)
            watch.stop()

            watch.start("match")
            _, assignments = match_segments(
                segment_block,
                prompt_block,
                config.similarity_floor,
                config.floor_class_index,
            )
            watch.stop()

            for mask, assignment in zip(kept, assignments):
                rle = mask.to_rle()
                segments_payload.append(
                    {
                        "id": mask.id,
                        "rle": {"size": list(rle.size), "counts": list(rle.counts)},
                        "area": mask.area,
                        "bbox": list(mask.bbox),
                        "stability_score": mask.stability_score,
                        "predicted_iou": mask.predicted_iou,
                        "class_index": assignment.class_index,
                        "similarity": assignment.similarity,
                        "runner_up": list(assignment.runner_up)
                        if assignment.runner_up
                        else None,
                    }
                )
        else:
            watch.stop()

        record.ok = True
        record.stage = None
        width, height = segment_set.image_size
        return record, {
            "image": ref,
            "width": width,
            "height": height,
            "segments": segments_payload,
        }
    except Exception as exc:  # noqa: BLE001 - single-image isolation
        watch.stop()
        record.error = f"{type(exc).__name__}: {exc}"
        return record, None


def dataset_from_payload(
    payloads: list[dict],
    prompts: list[Prompt],
    config_digest: str,
    name: str,
    splits: dict[str, list[str]] | None,
    nms_provenance: dict,
    formats: tuple[str, ...] = (),
) -> LabeledDataset:
    """Build the exportable dataset: export-enabled prompts only, class indices
    remapped densely over the exported classes."""
    exported_prompts = [p for p in prompts if p.export]
    remap = {p.class_index: k for k, p in enumerate(exported_prompts)}
    refs = [payload["image"] for payload in payloads]
    if splits:
        known = set(refs)
        for split_name, members in splits.items():
            unknown = [m for m in members if m not in known]
            if unknown:
                raise ConfigError(
                    f"split {split_name!r} lists images that were not processed: {unknown}"
                )
        manifest_splits = {k: tuple(v) for k, v in splits.items()}
        listed = {m for members in splits.values() for m in members}
        leftovers = tuple(r for r in refs if r not in listed)
        manifest_splits["train"] = tuple(manifest_splits.get("train", ())) + leftovers
    else:
        manifest_splits = {"train": tuple(refs)}

    instances = []
    image_sizes = {}
    for payload in payloads:
        ref = payload["image"]
        image_sizes[ref] = (payload["width"], payload["height"])
        for seg in payload["segments"]:
            if seg["class_index"] not in remap:
                continue
            mask = Mask(
                id=seg["id"],
                bitmap=decode_rle(
                    RunLength(
                        size=tuple(seg["rle"]["size"]), counts=tuple(seg["rle"]["counts"])
                    )
                ),
                stability_score=seg["stability_score"],
                predicted_iou=seg.get("predicted_iou"),
            )
            instances.append(
                LabeledInstance(
                    mask=mask,
                    class_index=remap[seg["class_index"]],
                    similarity=float(seg["similarity"]),
                    image_ref=ref,
                )
            )
    manifest = DatasetManifest(
        name=name,
        class_names=tuple(p.label for p in exported_prompts),
        splits=manifest_splits,
        formats=formats,
        provenance={
            "engine_version": __version__,
            "config_digest": config_digest,
            "prompt_digest": prompts_digest(prompts),
            "nms": nms_provenance,
        },
    )
    return LabeledDataset(manifest=manifest, instances=instances, image_sizes=image_sizes)


def run_pipeline(config: PipelineConfig) -> RunRecord:
    config.validate()
    prompts = load_prompts(config.prompts_path)
    if not prompts:
        raise ConfigError("prompt file is empty")
    if config.floor_class_index is not None and not (
        0 <= config.floor_class_index < len(prompts)
    ):
        raise ConfigError("floor_class_index does not name a prompt")

    digest = config.result_digest(prompts)
    cache = EmbeddingCache(config.cache_dir)
    refs = discover_images(config.images_dir)

    prompt_block = _embed_prompts(config, prompts, cache)

    results: dict[str, tuple[ImageRecord, dict | None]] = {}
    if config.workers > 1 and len(refs) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            futures = {
                ref: pool.submit(_process_image, config, ref, prompt_block, cache)
                for ref in refs
            }
            for ref, future in futures.items():
                results[ref] = future.result()
    else:
        for ref in refs:
            results[ref] = _process_image(config, ref, prompt_block, cache)

    records = []
    payloads = []
    for ref in refs:  # ordered reduce
        record, payload = results[ref]
        records.append(record)
        if payload is not None:
            payloads.append(payload)

    record = RunRecord(config_digest=digest, images=records)
    for stage in ("segments", "nms", "crop", "embed", "match"):
        record.stage_totals[stage] = sum(
            rec.stage_seconds.get(stage, 0.0) for rec in records
        )

    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)

    instances_payload = {
        "config_digest": digest,
        "prompts": [
            {"label": p.label, "description": p.description, "export": p.export}
            for p in prompts
        ],
        "images": payloads,
    }
    (out / "instances.json").write_text(
        json.dumps(instances_payload, indent=2) + "\n", encoding="utf-8"
    )

    export_started = time.perf_counter()
    nms_provenance = {
        "enabled": config.nms_enabled,
        "threshold": config.nms.threshold,
        "min_area": config.nms.min_area,
    }
    effective_formats = config.formats
    if config.gt_path is not None and "coco" not in effective_formats:
        # Evaluation reads the exported COCO file, so force it on.
        effective_formats = effective_formats + ("coco",)
    dataset = dataset_from_payload(
        payloads,
        prompts,
        digest,
        config.dataset_name,
        config.splits,
        nms_provenance,
        formats=effective_formats,
    )
    export_dataset(
        dataset,
        effective_formats,
        out / "exports",
        epsilon=config.polygon_epsilon,
        min_component_area=config.min_component_area,
    )
    record.export_seconds = time.perf_counter() - export_started

    for ref in refs:
        rec, payload = results[ref]
        if payload is None:
            continue
        exported = sum(
            1 for seg in payload["segments"] if prompts[seg["class_index"]].export
        )
        rec.counts["exported"] = exported
        rec.no_exported_instances = exported == 0

    if config.gt_path is not None:
        eval_started = time.perf_counter()
        gt_dataset, _ = load_coco_dataset(config.gt_path, want_masks=True)
        pred_dataset, _ = load_coco_dataset(
            out / "exports" / "coco" / "instances.json", want_masks=True
        )
        eval_dir = out / "eval"
        eval_dir.mkdir(parents=True, exist_ok=True)
        for kind in ("box", "mask"):
            report = coco_eval(gt_dataset, pred_dataset, kind)
            (eval_dir / f"report_{kind}.json").write_text(
                json.dumps(report.to_json(), indent=2) + "\n", encoding="utf-8"
            )
            (eval_dir / f"report_{kind}.txt").write_text(
                report.to_table() + "\n", encoding="utf-8"
            )
        record.eval_seconds = time.perf_counter() - eval_started

    (out / "run_record.json").write_text(
        json.dumps(record.to_json(), indent=2) + "\n", encoding="utf-8"
    )
    return record


def bench(config: PipelineConfig, n_repeats: int) -> dict:
    """Repeat the full run and summarize per-stage wall time."""
    if n_repeats < 1:
        raise ConfigError("n_repeats must be >= 1")
    config.validate()
    if not discover_images(config.images_dir):
        raise ConfigError("bench needs at least one input image")

    samples: dict[str, list[float]] = {}
    image_count = 0
    for k in range(n_repeats):
        run_out = config.out_dir / f"bench-{k}"
        run_config = PipelineConfig(**{**config.__dict__, "out_dir": run_out})
        record = run_pipeline(run_config)
        image_count = len(record.images)
        for stage, seconds in record.stage_totals.items():
            samples.setdefault(stage, []).append(seconds)
        samples.setdefault("export", []).append(record.export_seconds)

    def _summary(values: list[float]) -> dict:
        ordered = sorted(values)
        p95_index = min(len(ordered) - 1, int(round(0.95 * (len(ordered) - 1))))
        return {
            "mean": statistics.fmean(values),
            "median": statistics.median(values),
            "p95": ordered[p95_index],
        }

    return {
        "repeats": n_repeats,
        "images_per_run": image_count,
        "stages": {stage: _summary(values) for stage, values in samples.items()},
        "total": _summary([sum(vals) for vals in zip(*samples.values())]),
    }
