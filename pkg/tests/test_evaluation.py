from __future__ import annotations

import numpy as np
import pytest

from segmatch.errors import (
    ClassListMismatch,
    SizeMismatch,
    UnsortedInput,
    ValueOutOfRange,
)
from segmatch.evaluation import (
    EvalDataset,
    EvalInstance,
    average_precision,
    box_iou,
    coco_eval,
    match_greedy,
    voc_eval,
)
from segmatch.masks import Mask

from reference_eval import ref_box_iou, ref_coco_eval, ref_confusion, ref_mask_iou


def rect_mask(x, y, w, h, side=32, mask_id="m"):
    grid = np.zeros((side, side), dtype=bool)
    grid[y : y + h, x : x + w] = True
    return Mask(id=mask_id, bitmap=grid)


def random_scene(rng, num_classes=2, max_gt=6, max_det=8, side=32):
    """One image worth of random rectangles for both GT and detections."""
    gts = []
    for k in range(int(rng.integers(0, max_gt + 1))):
        x, y = int(rng.integers(0, side - 6)), int(rng.integers(0, side - 6))
        w, h = int(rng.integers(3, side - x)), int(rng.integers(3, side - y))
        cls = int(rng.integers(0, num_classes))
        gts.append((cls, (float(x), float(y), float(w), float(h))))
    dets = []
    for k in range(int(rng.integers(0, max_det + 1))):
        if gts and rng.random() < 0.7:
            # Jittered copy of one ground truth so some detections match.
            cls, (x, y, w, h) = gts[int(rng.integers(0, len(gts)))]
            dx, dy = int(rng.integers(-2, 3)), int(rng.integers(-2, 3))
            x = min(max(0, x + dx), side - 3)
            y = min(max(0, y + dy), side - 3)
            w = min(w, side - x)
            h = min(h, side - y)
        else:
            x, y = int(rng.integers(0, side - 6)), int(rng.integers(0, side - 6))
            w, h = int(rng.integers(3, side - x)), int(rng.integers(3, side - y))
            cls = int(rng.integers(0, num_classes))
        dets.append((cls, float(rng.random()), (float(x), float(y), float(w), float(h))))
    return gts, dets


def scene_to_datasets(scenes, num_classes, kind, side=32):
    class_names = tuple(f"c{k}" for k in range(num_classes))
    refs = tuple(f"img{n}" for n in range(len(scenes)))
    gt_instances = []
    det_instances = []
    for ref, (gts, dets) in zip(refs, scenes):
        for idx, (cls, box) in enumerate(gts):
            mask = rect_mask(*(int(v) for v in box), side=side, mask_id=f"{ref}-g{idx}")
            gt_instances.append(
                EvalInstance(image_ref=ref, class_index=cls, bbox=box, mask=mask)
            )
        for idx, (cls, score, box) in enumerate(dets):
            mask = rect_mask(*(int(v) for v in box), side=side, mask_id=f"{ref}-d{idx}")
            det_instances.append(
                EvalInstance(
                    image_ref=ref, class_index=cls, bbox=box, mask=mask, score=score
                )
            )
    gt = EvalDataset(class_names=class_names, image_refs=refs, instances=gt_instances)
    det = EvalDataset(class_names=class_names, image_refs=refs, instances=det_instances)
    return gt, det


def reference_for(scenes, num_classes, kind, side=32):
    refs = [f"img{n}" for n in range(len(scenes))]
    gt_by = {}
    det_by = {}
    for ref, (gts, dets) in zip(refs, scenes):
        if kind == "box":
            gt_by[ref] = [(cls, box) for cls, box in gts]
            det_by[ref] = [(cls, score, box) for cls, score, box in dets]
            iou_fn = ref_box_iou
        else:
            gt_by[ref] = [
                (cls, rect_mask(*(int(v) for v in box), side=side).bitmap.tolist())
                for cls, box in gts
            ]
            det_by[ref] = [
                (cls, score, rect_mask(*(int(v) for v in box), side=side).bitmap.tolist())
                for cls, score, box in dets
            ]
            iou_fn = ref_mask_iou
    return ref_coco_eval(gt_by, det_by, refs, num_classes, iou_fn)


class TestMatchGreedy:
    def test_perfect_match(self):
        gt = EvalInstance("i", 0, (0, 0, 4, 4))
        det = EvalInstance("i", 0, (0, 0, 4, 4), score=1.0)
        assert match_greedy([gt], [det], 0.5) == [True]

    def test_higher_score_takes_the_gt(self):
        gt = EvalInstance("i", 0, (0, 0, 4, 4))
        d1 = EvalInstance("i", 0, (0, 0, 4, 4), score=0.9)
        d2 = EvalInstance("i", 0, (0, 1, 4, 4), score=0.5)
        assert match_greedy([gt], [d1, d2], 0.5) == [True, False]

    def test_unsorted_rejected(self):
        gt = EvalInstance("i", 0, (0, 0, 4, 4))
        d1 = EvalInstance("i", 0, (0, 0, 4, 4), score=0.5)
        d2 = EvalInstance("i", 0, (0, 0, 4, 4), score=0.9)
        with pytest.raises(UnsortedInput):
            match_greedy([gt], [d1, d2], 0.5)

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(31)
        for _ in range(50):
            gts, dets = random_scene(rng)
            dets = sorted(dets, key=lambda d: -d[1])
            gt_instances = [
                EvalInstance("i", 0, box) for cls, box in gts
            ]
            det_instances = [
                EvalInstance("i", 0, box, score=score) for cls, score, box in dets
            ]
            flags = match_greedy(gt_instances, det_instances, 0.5)
            used = [False] * len(gts)
            expected = []
            for _, score, box in dets:
                best_iou, best_idx = -1.0, -1
                for g_idx, (_, gt_box) in enumerate(gts):
                    if used[g_idx]:
                        continue
                    iou = ref_box_iou(box, gt_box)
                    if iou >= 0.5 and iou > best_iou:
                        best_iou, best_idx = iou, g_idx
                if best_idx >= 0:
                    used[best_idx] = True
                    expected.append(True)
                else:
                    expected.append(False)
            assert flags == expected


class TestAveragePrecision:
    def test_single_tp(self):
        assert average_precision([True], [0.9], 1) == 1.0

    def test_high_fp_then_low_tp_is_half(self):
        assert average_precision([False, True], [0.9, 0.1], 1) == pytest.approx(0.5)

    def test_no_detections(self):
        assert average_precision([], [], 3) == 0.0

    def test_trailing_zero_iou_fp_never_raises_ap(self):
        rng = np.random.default_rng(37)
        for _ in range(30):
            n = int(rng.integers(1, 8))
            flags = [bool(rng.random() < 0.6) for _ in range(n)]
            scores = sorted((float(rng.random()) for _ in range(n)), reverse=True)
            num_gt = max(1, sum(flags))
            base = average_precision(flags, scores, num_gt)
            extended = average_precision(
                flags + [False], scores + [min(scores) - 0.1 if scores else 0.0], num_gt
            )
            assert extended <= base + 1e-12


class TestCocoEval:
    def test_perfect_predictions_all_ones(self):
        scenes = [
            ([(0, (2.0, 2.0, 6.0, 6.0)), (1, (12.0, 12.0, 8.0, 8.0))], []),
        ]
        gts = scenes[0][0]
        scenes = [(gts, [(cls, 1.0, box) for cls, box in gts])]
        gt, det = scene_to_datasets(scenes, 2, "box")
        for kind in ("box", "mask"):
            report = coco_eval(gt, det, kind)
            assert report.map50 == 1.0
            assert report.map5095 == 1.0
            assert report.mar5095 == 1.0

    def test_empty_predictions_all_zero(self):
        scenes = [([(0, (2.0, 2.0, 6.0, 6.0))], [])]
        gt, det = scene_to_datasets(scenes, 2, "box")
        report = coco_eval(gt, det, "box")
        assert report.map50 == 0.0
        assert report.map5095 == 0.0
        assert report.mar5095 == 0.0

    def test_hand_case_half_ap(self):
        scenes = [
            (
                [(0, (2.0, 2.0, 8.0, 8.0))],
                [(0, 0.9, (20.0, 20.0, 6.0, 6.0)), (0, 0.1, (2.0, 2.0, 8.0, 8.0))],
            )
        ]
        gt, det = scene_to_datasets(scenes, 1, "box")
        report = coco_eval(gt, det, "box")
        assert report.map50 == pytest.approx(0.5)

    @pytest.mark.parametrize("kind", ["box", "mask"])
    def test_matches_reference_on_random_scenes(self, kind):
        rng = np.random.default_rng(41)
        for _ in range(25):
            scenes = [random_scene(rng) for _ in range(int(rng.integers(1, 4)))]
            gt, det = scene_to_datasets(scenes, 2, kind)
            report = coco_eval(gt, det, kind)
            exp50, exp5095, expar, exp_ap = reference_for(scenes, 2, kind)
            assert report.map50 == pytest.approx(exp50, abs=1e-9)
            assert report.map5095 == pytest.approx(exp5095, abs=1e-9)
            assert report.mar5095 == pytest.approx(expar, abs=1e-9)
            for cls, aps in exp_ap.items():
                assert report.per_class_ap[cls] == pytest.approx(aps, abs=1e-9)
            assert report.map50 >= report.map5095 - 1e-12

    def test_box_and_mask_agree_on_filled_rectangles(self):
        rng = np.random.default_rng(43)
        scenes = [random_scene(rng) for _ in range(3)]
        gt, det = scene_to_datasets(scenes, 2, "mask")
        box_report = coco_eval(gt, det, "box")
        mask_report = coco_eval(gt, det, "mask")
        assert box_report.map5095 == pytest.approx(mask_report.map5095, abs=1e-12)

    def test_image_reorder_invariance(self):
        rng = np.random.default_rng(47)
        scenes = [random_scene(rng) for _ in range(4)]
        gt, det = scene_to_datasets(scenes, 2, "box")
        report = coco_eval(gt, det, "box")
        reordered = list(reversed(scenes))
        gt2, det2 = scene_to_datasets(reordered, 2, "box")
        report2 = coco_eval(gt2, det2, "box")
        assert report.map5095 == pytest.approx(report2.map5095, abs=1e-12)

    def test_class_relabel_invariance(self):
        rng = np.random.default_rng(53)
        scenes = [random_scene(rng) for _ in range(3)]
        swapped = [
            (
                [(1 - cls, box) for cls, box in gts],
                [(1 - cls, score, box) for cls, score, box in dets],
            )
            for gts, dets in scenes
        ]
        gt, det = scene_to_datasets(scenes, 2, "box")
        gt2, det2 = scene_to_datasets(swapped, 2, "box")
        assert coco_eval(gt, det, "box").map5095 == pytest.approx(
            coco_eval(gt2, det2, "box").map5095, abs=1e-12
        )

    def test_class_list_mismatch(self):
        gt, det = scene_to_datasets([([(0, (1.0, 1.0, 3.0, 3.0))], [])], 2, "box")
        det.class_names = ("other",)
        with pytest.raises(ClassListMismatch):
            coco_eval(gt, det, "box")

    def test_absent_class_excluded_from_means(self):
        # Class 1 has no ground truth; a perfect class-0 run still scores 1.0.
        scenes = [([(0, (2.0, 2.0, 6.0, 6.0))], [(0, 0.9, (2.0, 2.0, 6.0, 6.0))])]
        gt, det = scene_to_datasets(scenes, 2, "box")
        report = coco_eval(gt, det, "box")
        assert report.map50 == 1.0
        assert 1 not in report.per_class_ap


class TestVocEval:
    def test_perfect_prediction(self):
        gt = np.array([[1, 1], [2, 2]])
        report = voc_eval([gt], [gt.copy()], num_classes=2)
        assert report.class_accuracy == 1.0
        assert report.miou == 1.0
        assert report.fwiou == 1.0

    def test_half_image_misclassification_hand_case(self):
        gt = np.zeros((4, 4), dtype=np.int64)
        gt[:, :2] = 1
        gt[:, 2:] = 2
        pred = np.ones((4, 4), dtype=np.int64)
        report = voc_eval([gt], [pred], num_classes=2)
        assert report.per_class[1]["iou"] == pytest.approx(0.5)
        assert report.per_class[2]["iou"] == 0.0
        assert report.miou == pytest.approx(0.25)
        assert report.class_accuracy == pytest.approx(0.5)
        assert report.fwiou == pytest.approx(0.25)

    def test_matches_confusion_oracle_exactly(self):
        rng = np.random.default_rng(59)
        for _ in range(20):
            num_classes = int(rng.integers(1, 4))
            maps_gt = [
                rng.integers(0, num_classes + 1, size=(6, 7)) for _ in range(3)
            ]
            maps_pred = [
                rng.integers(0, num_classes + 1, size=(6, 7)) for _ in range(3)
            ]
            report = voc_eval(maps_gt, maps_pred, num_classes)
            expected = ref_confusion(
                [m.tolist() for m in maps_gt], [m.tolist() for m in maps_pred], num_classes
            )
            assert report.confusion.tolist() == expected

    def test_confusion_sums_to_pixels(self):
        rng = np.random.default_rng(61)
        gt = rng.integers(0, 3, size=(5, 5))
        pred = rng.integers(0, 3, size=(5, 5))
        report = voc_eval([gt], [pred], num_classes=2)
        assert int(report.confusion.sum()) == 25

    def test_size_mismatch(self):
        with pytest.raises(SizeMismatch):
            voc_eval([np.zeros((2, 2))], [np.zeros((3, 3))], 1)

    def test_value_out_of_range(self):
        with pytest.raises(ValueOutOfRange):
            voc_eval([np.full((2, 2), 5)], [np.zeros((2, 2))], 2)

    def test_background_in_fwiou_weighting_only(self):
        # Half background correctly predicted, half class 1 predicted as
        # background: background weight contributes to FWIoU but class means
        # ignore it.
        gt = np.zeros((2, 2), dtype=np.int64)
        gt[1, :] = 1
        pred = np.zeros((2, 2), dtype=np.int64)
        report = voc_eval([gt], [pred], num_classes=1)
        assert report.class_accuracy == 0.0
        assert report.miou == 0.0
        # background IoU = 2/4 (two correct background pixels, two false).
        assert report.fwiou == pytest.approx(0.5 * 0.5 + 0.5 * 0.0)


class TestBoxIou:
    def test_matches_reference(self):
        rng = np.random.default_rng(67)
        for _ in range(200):
            a = tuple(float(v) for v in rng.uniform(0, 20, size=4))
            b = tuple(float(v) for v in rng.uniform(0, 20, size=4))
            assert box_iou(a, b) == pytest.approx(ref_box_iou(a, b), abs=1e-12)
