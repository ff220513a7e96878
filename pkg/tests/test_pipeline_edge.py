from __future__ import annotations

import json

import numpy as np

from segmatch.ingest import SegmentSet, save_segments
from segmatch.masks import Mask
from segmatch.pipeline import discover_images, run_pipeline

from synth import generate_scene_set, write_config
from test_pipeline import build_config


def test_empty_mask_in_segments_does_not_abort_image(tmp_path):
    config = build_config(tmp_path, n_images=2)
    segments_dir = tmp_path / "segments"
    segments_dir.mkdir()
    refs = discover_images(config.images_dir)
    for ref in refs:
        blob = np.zeros((96, 96), dtype=bool)
        blob[10:30, 10:30] = True
        segment_set = SegmentSet(
            image_ref=ref,
            image_size=(96, 96),
            segments=(
                Mask(id="solid", bitmap=blob, stability_score=0.9),
                Mask(id="degenerate", bitmap=np.zeros((96, 96), dtype=bool), stability_score=0.5),
            ),
        )
        save_segments(segment_set, segments_dir / f"{ref.rsplit('.', 1)[0]}.json")

    config.segments_dir = segments_dir
    config.segmenter_command = None
    record = run_pipeline(config)
    assert record.failed == 0
    instances = json.loads((config.out_dir / "instances.json").read_text())
    for image in instances["images"]:
        ids = [seg["id"] for seg in image["segments"]]
        assert ids == ["solid"]


def test_all_masks_suppressed_flags_image(tmp_path):
    scene = generate_scene_set(tmp_path / "scene", 1, seed=3)
    config_path = write_config(tmp_path / "config.json", scene, tmp_path / "out")
    from segmatch.pipeline import PipelineConfig

    config = PipelineConfig.from_file(config_path)
    segments_dir = tmp_path / "segments"
    segments_dir.mkdir()
    ref = discover_images(config.images_dir)[0]
    save_segments(
        SegmentSet(image_ref=ref, image_size=(96, 96), segments=()),
        segments_dir / f"{ref.rsplit('.', 1)[0]}.json",
    )
    config.segments_dir = segments_dir
    config.segmenter_command = None
    record = run_pipeline(config)
    assert record.failed == 0
    assert record.images[0].no_exported_instances is True
    assert record.images[0].counts["exported"] == 0
