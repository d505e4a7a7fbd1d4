import numpy as np
import pytest

from oracles import reference_flags, reference_map
from yolov1.evaluate import (
    ALL_POINT, ELEVEN_POINT, FP, IGNORED, TP, EvalConfig, GroundTruth, average_precision, match_detections, mean_ap,
)
from yolov1.geometry import BoxYolo
from yolov1.tensor_codec import Detection

NAMES = {TP: "tp", FP: "fp", IGNORED: "ignored"}


def gt(c, cx, cy, w, h, difficult=False):
    return GroundTruth(BoxYolo(c, cx, cy, w, h), difficult)


def det(c, score, cx, cy, w, h):
    return Detection(c, score, BoxYolo(c, cx, cy, w, h))


def random_case(rng, n_images=5, n_classes=3):
    gts, dets = [], []
    for _ in range(n_images):
        g_img, d_img = [], []
        for _ in range(int(rng.integers(0, 5))):
            c = int(rng.integers(0, n_classes))
            w, h = rng.uniform(0.05, 0.4, size=2)
            cx, cy = rng.uniform(0.2, 0.8, size=2)
            g_img.append(gt(c, cx, cy, w, h, difficult=bool(rng.uniform() < 0.15)))
            for _ in range(int(rng.integers(0, 3))):
                j = rng.normal(0, 0.03, size=4)
                d_img.append(det(c, float(np.round(rng.uniform(), 2)), cx + j[0], cy + j[1],
                                 abs(w + j[2]) + 0.01, abs(h + j[3]) + 0.01))
        for _ in range(int(rng.integers(0, 3))):
            c = int(rng.integers(0, n_classes))
            d_img.append(det(c, float(np.round(rng.uniform(), 2)), *rng.uniform(0.2, 0.8, size=2),
                             *rng.uniform(0.05, 0.4, size=2)))
        gts.append(g_img)
        dets.append(d_img)
    return dets, gts


class TestMatching:
    def test_exact_hit(self):
        assert match_detections([[det(0, 0.9, 0.5, 0.5, 0.2, 0.2)]], [[gt(0, 0.5, 0.5, 0.2, 0.2)]]) == [[TP]]

    def test_double_detection(self):
        dets = [[det(0, 0.8, 0.5, 0.5, 0.2, 0.2), det(0, 0.9, 0.5, 0.5, 0.2, 0.2)]]
        assert match_detections(dets, [[gt(0, 0.5, 0.5, 0.2, 0.2)]]) == [[FP, TP]]

    def test_wrong_class_is_fp(self):
        assert match_detections([[det(1, 0.9, 0.5, 0.5, 0.2, 0.2)]], [[gt(0, 0.5, 0.5, 0.2, 0.2)]]) == [[FP]]

    def test_difficult_ignored(self):
        flags = match_detections([[det(0, 0.9, 0.5, 0.5, 0.2, 0.2)]], [[gt(0, 0.5, 0.5, 0.2, 0.2, True)]])
        assert flags == [[IGNORED]]

    def test_matches_reference(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            dets, gts = random_case(rng)
            flags = match_detections(dets, gts, 0.5)
            ref = reference_flags(dets, gts, 0.5)
            for img, per in enumerate(flags):
                for k, f in enumerate(per):
                    assert NAMES[f] == ref[(img, k)]


class TestAveragePrecision:
    def test_perfect(self):
        for mode in (ELEVEN_POINT, ALL_POINT):
            assert average_precision([True, True], [0.9, 0.8], 2, mode) == 1.0

    def test_no_detections(self):
        assert average_precision([], [], 3) == 0.0

    def test_worked_example(self):
        # precision (1, 1/2, 2/3) at recall (1/2, 1/2, 1): six samples at 1, five at 2/3
        assert average_precision([True, False, True], [0.9, 0.8, 0.7], 2, ELEVEN_POINT) == 28 / 33

    def test_worked_example_allpoint(self):
        assert average_precision([True, False, True], [0.9, 0.8, 0.7], 2, ALL_POINT) == pytest.approx(
            0.5 * 1 + 0.5 * (2 / 3), abs=1e-15)

    def test_unsorted_input_is_sorted(self):
        assert average_precision([True, True, False], [0.7, 0.9, 0.8], 2) == 28 / 33

    def test_empty_class(self):
        assert average_precision([], [], 0) == 1.0
        assert average_precision([False], [0.3], 0) == 0.0

    def test_top_tp_never_hurts(self):
        rng = np.random.default_rng(1)
        for _ in range(300):
            n = int(rng.integers(1, 12))
            flags = list(rng.uniform(size=n) < 0.5)
            scores = list(rng.uniform(size=n))
            n_pos = sum(flags) + int(rng.integers(0, 4)) + 1
            for mode in (ELEVEN_POINT, ALL_POINT):
                before = average_precision(flags, scores, n_pos, mode)
                after = average_precision([True] + flags, [2.0] + scores, n_pos, mode)
                assert after >= before - 1e-15
                assert 0 <= before <= 1


class TestMeanAp:
    def test_perfect(self):
        gts = [[gt(0, 0.5, 0.5, 0.2, 0.2), gt(2, 0.2, 0.2, 0.1, 0.1)], [gt(0, 0.3, 0.7, 0.2, 0.3)]]
        dets = [[Detection(g.class_id, 1.0, g.box) for g in per] for per in gts]
        res = mean_ap(dets, gts)
        assert res.map == 1.0
        assert sorted(res.per_class) == [0, 2]

    def test_empty_detections(self):
        gts = [[gt(0, 0.5, 0.5, 0.2, 0.2)]]
        assert mean_ap([[]], gts).map == 0.0

    def test_matches_reference(self):
        rng = np.random.default_rng(2)
        for i in range(200):
            dets, gts = random_case(rng)
            mode = (ELEVEN_POINT, ALL_POINT)[i % 2]
            res = mean_ap(dets, gts, EvalConfig(0.5, mode))
            ref_map, ref_aps = reference_map(dets, gts, 0.5, mode)
            assert res.per_class.keys() == ref_aps.keys()
            assert res.map == pytest.approx(ref_map, abs=1e-9)

    def test_score_transform_invariance(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            dets, gts = random_case(rng)
            warped = [[Detection(d.class_id, d.score ** 3 + 1, d.box) for d in per] for per in dets]
            assert match_detections(dets, gts) == match_detections(warped, gts)
            assert mean_ap(dets, gts).map == mean_ap(warped, gts).map

    def test_config_validation(self):
        with pytest.raises(ValueError):
            EvalConfig(iou_threshold=1.0)
        with pytest.raises(ValueError):
            EvalConfig(ap_mode="coco")
