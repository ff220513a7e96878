"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. Tolerances are pinned here and nowhere else.
"""
from __future__ import annotations

import json
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from segmatch.cli import main
from segmatch.evaluation import coco_eval, load_coco_dataset
from segmatch.export import (
    DatasetManifest,
    LabeledDataset,
    LabeledInstance,
    export_dataset,
)
from segmatch.masks import Mask
from segmatch.matching import EmbeddingBlock, assign_labels, normalize_rows, similarity_matrix
from segmatch.nms import NmsConfig, mask_nms
from segmatch.pipeline import PipelineConfig, run_pipeline
from segmatch.polygons import mask_to_polygons, polygon_fidelity
from segmatch.evaluation import voc_eval

from reference_eval import ref_box_iou, ref_coco_eval, ref_confusion, ref_mask_iou
from reference_nms import reference_mask_nms
from synth import generate_scene_set, write_config
from test_evaluation import random_scene, reference_for, scene_to_datasets
from test_pipeline import hash_tree

GOLDEN_DIR = Path(__file__).parent / "golden" / "expected"


@contextmanager
def criterion(name: str):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {name}: FAIL")
        raise
    print(f"ACCEPTANCE {name}: PASS")


def random_nms_instance(rng: np.random.Generator):
    n = int(rng.integers(2, 51))
    masks = []
    for k in range(n):
        grid = np.zeros((64, 64), dtype=bool)
        y = int(rng.integers(0, 60))
        x = int(rng.integers(0, 60))
        h = int(rng.integers(2, 64 - y))
        w = int(rng.integers(2, 64 - x))
        grid[y : y + h, x : x + w] = True
        masks.append(Mask(id=f"m{k}", bitmap=grid, stability_score=float(rng.random())))
    return masks


def test_mask_nms_fidelity():
    with criterion("mask NMS fidelity (1,000 random instances, < 5 s)"):
        rng = np.random.default_rng(2024)
        instances = [random_nms_instance(rng) for _ in range(1000)]
        elapsed = 0.0
        for masks in instances:
            started = time.perf_counter()
            outcome = mask_nms(masks)
            elapsed += time.perf_counter() - started
            expected = reference_mask_nms(
                [m.bitmap for m in masks], [m.stability_score for m in masks], 0.9
            )
            assert outcome.kept == tuple(
                k for k, flag in enumerate(expected) if flag
            )
        assert elapsed < 5.0, f"mask_nms took {elapsed:.2f} s over 1,000 instances"


def test_nms_constants_and_properties():
    with criterion("NMS constants and properties"):
        assert NmsConfig().threshold == 0.9
        rng = np.random.default_rng(99)
        for _ in range(100):
            masks = random_nms_instance(rng)
            outcome = mask_nms(masks)
            survivors = [masks[k] for k in outcome.kept]
            second = mask_nms(survivors)
            assert second.kept == tuple(range(len(survivors)))
            assert second.suppressed == ()
        # Identical-mask pairs always resolve to the higher stability score.
        for _ in range(50):
            grid = np.zeros((32, 32), dtype=bool)
            y, x = int(rng.integers(0, 24)), int(rng.integers(0, 24))
            grid[y : y + 8, x : x + 8] = True
            s1, s2 = float(rng.random()), float(rng.random())
            pair = [
                Mask(id="a", bitmap=grid, stability_score=s1),
                Mask(id="b", bitmap=grid, stability_score=s2),
            ]
            outcome = mask_nms(pair)
            winner = pair[outcome.kept[0]]
            assert winner.stability_score == max(s1, s2) or (
                s1 == s2 and outcome.kept == (0,)
            )


def test_matching_correctness():
    with criterion("matching correctness (1e-6 vs brute force; exact argmax)"):
        rng = np.random.default_rng(7)
        for rows, dim in ((1000, 512), (257, 64), (10, 8)):
            img = normalize_rows(
                EmbeddingBlock(
                    ids=tuple(f"s{i}" for i in range(rows)),
                    vectors=rng.normal(size=(rows, dim)),
                )
            )
            txt = normalize_rows(
                EmbeddingBlock(
                    ids=tuple(f"t{j}" for j in range(16)),
                    vectors=rng.normal(size=(16, dim)),
                )
            )
            matrix = similarity_matrix(img, txt)
            img64 = img.vectors.astype(np.float64)
            txt64 = txt.vectors.astype(np.float64)
            for i in range(0, rows, max(1, rows // 50)):
                for j in range(16):
                    brute = float(np.sum(img64[i] * txt64[j]))
                    assert abs(matrix.values[i, j] - brute) <= 1e-6
        for _ in range(100):
            raw = rng.normal(size=(20, 64))
            scales = rng.uniform(0.05, 20.0, size=(20, 1))
            txt = normalize_rows(
                EmbeddingBlock(
                    ids=tuple(f"t{j}" for j in range(5)),
                    vectors=rng.normal(size=(5, 64)),
                )
            )
            ids = tuple(f"s{i}" for i in range(20))
            base = assign_labels(
                similarity_matrix(
                    normalize_rows(EmbeddingBlock(ids=ids, vectors=raw)), txt
                )
            )
            scaled = assign_labels(
                similarity_matrix(
                    normalize_rows(EmbeddingBlock(ids=ids, vectors=raw * scales)), txt
                )
            )
            assert [a.class_index for a in base] == [a.class_index for a in scaled]


def test_coco_evaluator_oracle():
    with criterion("COCO evaluator oracle (100 scenes, 1e-9; hand case 0.5)"):
        rng = np.random.default_rng(11)
        for trial in range(100):
            kind = "box" if trial % 2 == 0 else "mask"
            scenes = [random_scene(rng) for _ in range(int(rng.integers(1, 4)))]
            gt, det = scene_to_datasets(scenes, 2, kind)
            report = coco_eval(gt, det, kind)
            exp50, exp5095, expar, exp_ap = reference_for(scenes, 2, kind)
            assert abs(report.map50 - exp50) <= 1e-9
            assert abs(report.map5095 - exp5095) <= 1e-9
            assert abs(report.mar5095 - expar) <= 1e-9
            assert report.map50 >= report.map5095 - 1e-12

        # Hand case: one ground truth, a high-score miss and a low-score hit.
        scenes = [
            (
                [(0, (2.0, 2.0, 8.0, 8.0))],
                [(0, 0.9, (20.0, 20.0, 6.0, 6.0)), (0, 0.1, (2.0, 2.0, 8.0, 8.0))],
            )
        ]
        gt, det = scene_to_datasets(scenes, 1, "box")
        assert coco_eval(gt, det, "box").map50 == pytest.approx(0.5, abs=1e-12)

        # Perfect predictions.
        gts = [(0, (2.0, 2.0, 6.0, 6.0)), (1, (14.0, 14.0, 9.0, 9.0))]
        perfect = [(gts, [(cls, 1.0, box) for cls, box in gts])]
        gt, det = scene_to_datasets(perfect, 2, "box")
        report = coco_eval(gt, det, "box")
        assert report.map50 == 1.0 and report.map5095 == 1.0 and report.mar5095 == 1.0


def test_voc_evaluator_oracle():
    with criterion("VOC evaluator oracle (exact tally; hand case 0.25/0.5/0.25)"):
        rng = np.random.default_rng(13)
        for _ in range(50):
            num_classes = int(rng.integers(1, 5))
            gt_maps = [rng.integers(0, num_classes + 1, size=(9, 11)) for _ in range(4)]
            pred_maps = [rng.integers(0, num_classes + 1, size=(9, 11)) for _ in range(4)]
            report = voc_eval(gt_maps, pred_maps, num_classes)
            expected = ref_confusion(
                [m.tolist() for m in gt_maps],
                [m.tolist() for m in pred_maps],
                num_classes,
            )
            assert report.confusion.tolist() == expected

        gt = np.zeros((4, 4), dtype=np.int64)
        gt[:, :2] = 1
        gt[:, 2:] = 2
        report = voc_eval([gt], [np.ones((4, 4), dtype=np.int64)], 2)
        assert report.miou == pytest.approx(0.25, abs=1e-12)
        assert report.class_accuracy == pytest.approx(0.5, abs=1e-12)
        assert report.fwiou == pytest.approx(0.25, abs=1e-12)


def shapes_dataset(tmp_path: Path) -> LabeledDataset:
    rng = np.random.default_rng(17)
    refs = [f"img{k}.png" for k in range(4)]
    instances = []
    yy, xx = np.mgrid[0:48, 0:48]
    for n, ref in enumerate(refs):
        for k in range(3):
            kind = (n + k) % 3
            cy, cx = int(rng.integers(10, 38)), int(rng.integers(10, 38))
            if kind == 0:
                bitmap = (xx - cx) ** 2 + (yy - cy) ** 2 <= 64
            elif kind == 1:
                bitmap = (np.abs(xx - cx) <= 6) & (np.abs(yy - cy) <= 4)
            else:
                bitmap = (
                    (np.abs(xx - cx) <= 6) & (np.abs(yy - cy) <= 6)
                    & ~((xx > cx) & (yy < cy))
                )
            mask = Mask(id=f"{ref}-m{k}", bitmap=bitmap, stability_score=0.9)
            instances.append(
                LabeledInstance(
                    mask=mask,
                    class_index=k % 2,
                    similarity=float(rng.uniform(0.5, 1.0)),
                    image_ref=ref,
                )
            )
    manifest = DatasetManifest(
        name="shapes", class_names=("round", "boxy"), splits={"train": tuple(refs)}
    )
    return LabeledDataset(
        manifest=manifest,
        instances=instances,
        image_sizes={ref: (48, 48) for ref in refs},
    )


def test_export_round_trip(tmp_path):
    with criterion("export round trip (mAP50:95 == 1.0; fidelity >= 0.95)"):
        dataset = shapes_dataset(tmp_path)
        export_dataset(dataset, ("coco",), tmp_path / "exports")
        coco_path = tmp_path / "exports" / "coco" / "instances.json"
        gt, _ = load_coco_dataset(coco_path)
        pred, _ = load_coco_dataset(coco_path)
        for kind in ("box", "mask"):
            report = coco_eval(gt, pred, kind)
            assert report.map5095 == 1.0, f"{kind} round trip not exact"
        fidelity_report = json.loads(
            (tmp_path / "exports" / "polygon_fidelity.json").read_text()
        )
        assert fidelity_report["violations"] == []
        for inst in dataset.instances:
            polys = mask_to_polygons(inst.mask, epsilon=0.5)
            assert polygon_fidelity(inst.mask, polys) >= 0.95


def test_end_to_end_synthetic_pipeline(tmp_path):
    with criterion("end-to-end synthetic pipeline (mAP50 >= 0.95; NMS direction)"):
        scene = generate_scene_set(tmp_path / "scene", 8, seed=31)

        base_config = write_config(
            tmp_path / "base.json", scene, tmp_path / "out-base"
        )
        assert main(["run", "--config", str(base_config), "--gt", str(scene["gt"])]) == 0
        base_report = json.loads(
            (tmp_path / "out-base" / "eval" / "report_box.json").read_text()
        )
        assert base_report["mAP50"] >= 0.95

        dup_config = write_config(
            tmp_path / "dup.json", scene, tmp_path / "out-dup", duplicates=True
        )
        assert main(["run", "--config", str(dup_config), "--gt", str(scene["gt"])]) == 0
        with_nms = json.loads(
            (tmp_path / "out-dup" / "eval" / "report_mask.json").read_text()
        )

        nonms_config = write_config(
            tmp_path / "dup-nonms.json", scene, tmp_path / "out-dup-nonms", duplicates=True
        )
        assert (
            main(
                [
                    "run",
                    "--config",
                    str(nonms_config),
                    "--gt",
                    str(scene["gt"]),
                    "--no-nms",
                ]
            )
            == 0
        )
        without_nms = json.loads(
            (tmp_path / "out-dup-nonms" / "eval" / "report_mask.json").read_text()
        )
        assert without_nms["mAP50_95"] < with_nms["mAP50_95"], (
            f"suppression should strictly raise mAP50:95: "
            f"{with_nms['mAP50_95']} vs {without_nms['mAP50_95']}"
        )


def test_determinism_across_worker_counts(tmp_path):
    with criterion("determinism across worker counts (byte-identical exports)"):
        scene = generate_scene_set(tmp_path / "scene", 6, seed=41)
        single = write_config(
            tmp_path / "single.json", scene, tmp_path / "out-single", workers=1
        )
        pooled = write_config(
            tmp_path / "pooled.json", scene, tmp_path / "out-pooled", workers=4
        )
        assert main(["run", "--config", str(single)]) == 0
        assert main(["run", "--config", str(pooled)]) == 0
        assert hash_tree(tmp_path / "out-single" / "exports") == hash_tree(
            tmp_path / "out-pooled" / "exports"
        )
        assert (tmp_path / "out-single" / "instances.json").read_bytes() == (
            tmp_path / "out-pooled" / "instances.json"
        ).read_bytes()


def test_throughput_thousand_images(tmp_path):
    with criterion("throughput (1,000 images x 100 masks in < 60 s)"):
        rng = np.random.default_rng(53)
        text_block = normalize_rows(
            EmbeddingBlock(
                ids=("a", "b", "c", "d"),
                vectors=rng.normal(size=(4, 16)).astype(np.float32),
            )
        )
        refs = [f"bench-{n:04d}.png" for n in range(1000)]
        image_sizes = {ref: (64, 64) for ref in refs}

        prepared = []
        for ref in refs:
            masks = []
            for k in range(100):
                grid = np.zeros((64, 64), dtype=bool)
                y, x = int(rng.integers(0, 48)), int(rng.integers(0, 48))
                h, w = int(rng.integers(4, 16)), int(rng.integers(4, 16))
                grid[y : y + h, x : x + w] = True
                masks.append(
                    Mask(id=f"{ref}-m{k}", bitmap=grid, stability_score=float(rng.random()))
                )
            vectors = rng.normal(size=(100, 16)).astype(np.float32)
            prepared.append((ref, masks, vectors))

        started = time.perf_counter()
        instances = []
        from segmatch.pipeline import match_segments

        for ref, masks, vectors in prepared:
            outcome = mask_nms(masks)
            kept = [masks[k] for k in outcome.kept]
            block = EmbeddingBlock(
                ids=tuple(m.id for m in kept),
                vectors=vectors[list(outcome.kept)],
            )
            _, assignments = match_segments(block, text_block)
            for mask, assignment in zip(kept, assignments):
                instances.append(
                    LabeledInstance(
                        mask=mask,
                        class_index=assignment.class_index,
                        similarity=assignment.similarity,
                        image_ref=ref,
                    )
                )
        manifest = DatasetManifest(
            name="bench", class_names=("a", "b", "c", "d"), splits={"train": tuple(refs)}
        )
        dataset = LabeledDataset(
            manifest=manifest, instances=instances, image_sizes=image_sizes
        )
        export_dataset(dataset, ("coco", "yolo-det"), tmp_path / "bench-out")
        elapsed = time.perf_counter() - started
        assert elapsed < 60.0, f"pipeline core took {elapsed:.1f} s"
        print(f"  (throughput: {elapsed:.1f} s for 1,000 images, {len(instances)} instances)")


def test_format_golden_files(tmp_path):
    with criterion("format golden files (byte-for-byte)"):
        from make_golden import build_golden_dataset

        dataset = build_golden_dataset()
        export_dataset(dataset, ("coco", "yolo-det", "yolo-seg", "voc"), tmp_path / "out")
        produced = hash_tree(tmp_path / "out")
        expected = hash_tree(GOLDEN_DIR)
        assert produced == expected, (
            "golden mismatch: "
            + json.dumps(
                {
                    "missing": sorted(set(expected) - set(produced)),
                    "extra": sorted(set(produced) - set(expected)),
                    "changed": sorted(
                        k for k in set(produced) & set(expected)
                        if produced[k] != expected[k]
                    ),
                }
            )
        )


def test_workbench_loop_secondary(tmp_path):
    with criterion("SECONDARY workbench loop (column diff, parity, no reseg)"):
        from fastapi.testclient import TestClient

        from segmatch.service import create_app
        from synth import segmenter_command

        scene = generate_scene_set(tmp_path / "scene", 1, seed=61)
        log = tmp_path / "adapter.log"
        config_path = write_config(
            tmp_path / "config.json", scene, tmp_path / "out", log=log
        )
        config = PipelineConfig.from_file(config_path)
        client = TestClient(create_app(config))

        session_id = client.post("/sessions").json()["id"]
        image = sorted(p.name for p in scene["images_dir"].glob("*.png"))[0]
        assert (
            client.post(f"/sessions/{session_id}/images", json={"image": image}).status_code
            == 200
        )
        before = client.get(f"/sessions/{session_id}/images/{image}/match").json()
        segment_calls = sum(
            1 for line in log.read_text().splitlines() if line.startswith("segment")
        )

        prompts = json.loads(scene["prompts"].read_text())
        prompts[2]["description"] = "a blue oval berry"
        client.put(f"/sessions/{session_id}/prompts", json=prompts)
        after = client.get(f"/sessions/{session_id}/images/{image}/match").json()

        changed = {
            col
            for row_b, row_a in zip(before["matrix"], after["matrix"])
            for col, (b, a) in enumerate(zip(row_b, row_a))
            if b != a
        }
        assert changed == {2}, f"expected only column 2 to change, got {changed}"

        segment_calls_after = sum(
            1 for line in log.read_text().splitlines() if line.startswith("segment")
        )
        assert segment_calls_after == segment_calls, "prompt edit re-segmented"

        # Assignments shown to the client equal library-computed assignments.
        from segmatch.matching import Prompt
        from segmatch.pipeline import match_segments as lib_match
        from segmatch.matching import run_embedder_adapter

        text_block = run_embedder_adapter(
            config.embedder_command,
            texts=[(p["description"], p["description"]) for p in prompts],
        )
        seg_ids = after["segment_ids"]
        # Rebuild the segment block through the same engine path the service used.
        from segmatch.pipeline import EmbeddingCache, _embed_crops, _obtain_segments
        from segmatch.ingest import crop_for_embedding
        from PIL import Image as PilImage

        cache = EmbeddingCache(None)
        segment_set = _obtain_segments(config, image, cache)
        masks = list(segment_set.segments)
        outcome = mask_nms(masks, config.nms)
        kept = [masks[k] for k in outcome.kept]
        with PilImage.open(config.images_dir / image) as img:
            pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
        crops = [
            crop_for_embedding(pixels, m, config.crop_mode, config.embed_resolution)
            for m in kept
        ]
        segment_block = _embed_crops(config, image, crops, cache)
        _, lib_assignments = lib_match(segment_block, text_block)
        lib_payload = [
            {
                "segment_id": a.segment_id,
                "class_index": a.class_index,
                "similarity": a.similarity,
                "runner_up": None
                if a.runner_up is None
                else {"class_index": a.runner_up[0], "similarity": a.runner_up[1]},
            }
            for a in lib_assignments
        ]
        assert json.dumps(after["assignments"], sort_keys=True) == json.dumps(
            lib_payload, sort_keys=True
        )
