"""VOC-style detection metrics: greedy matching, per-class AP and mAP."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import BoxYolo, yolo_iou
from .tensor_codec import Detection

TP, FP, IGNORED = 1, 0, -1
ELEVEN_POINT = "elevenpoint"
ALL_POINT = "allpoint"


@dataclass(frozen=True)
class GroundTruth:
    box: BoxYolo
    difficult: bool = False

    @property
    def class_id(self) -> int:
        return self.box.class_id


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.5
    ap_mode: str = ELEVEN_POINT

    def __post_init__(self):
        if not 0 < self.iou_threshold < 1:
            raise ValueError("iou_threshold must lie in (0, 1)")
        if self.ap_mode not in (ELEVEN_POINT, ALL_POINT):
            raise ValueError(f"unknown AP mode {self.ap_mode!r}")


@dataclass
class EvalResult:
    map: float
    per_class: dict[int, float]
    curves: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict, repr=False)


def _global_order(dets: Sequence[Sequence[Detection]], class_id: int) -> list[tuple[int, int]]:
    """``(image, index)`` pairs of one class by score desc, then image, then index."""
    pairs = [
        (img, k)
        for img, per_image in enumerate(dets)
        for k, d in enumerate(per_image)
        if d.class_id == class_id
    ]
    pairs.sort(key=lambda p: (-dets[p[0]][p[1]].score, p[0], p[1]))
    return pairs


def match_detections(
    dets: Sequence[Sequence[Detection]],
    gts: Sequence[Sequence[GroundTruth]],
    iou_threshold: float = 0.5,
) -> list[list[int]]:
    """Label every detection TP, FP or IGNORED; output mirrors ``dets``.

    Detections are visited per class in global score order.  Each one claims
    the best-overlapping unmatched non-difficult ground truth of its image
    and class when that IoU reaches the threshold.  Otherwise it is ignored
    if it overlaps a difficult ground truth that well, and a false positive
    if not.
    """
    if len(dets) != len(gts):
        raise ValueError(f"{len(dets)} detection lists for {len(gts)} images")
    flags = [[FP] * len(per_image) for per_image in dets]
    classes = {d.class_id for per_image in dets for d in per_image}
    for c in sorted(classes):
        used = [[False] * len(g) for g in gts]
        for img, k in _global_order(dets, c):
            box = dets[img][k].box
            best, best_iou = -1, -1.0
            difficult_hit = False
            for g, gt in enumerate(gts[img]):
                if gt.class_id != c:
                    continue
                ov = yolo_iou(box, gt.box)
                if gt.difficult:
                    difficult_hit |= ov >= iou_threshold
                elif not used[img][g] and ov > best_iou:
                    best, best_iou = g, ov
            if best >= 0 and best_iou >= iou_threshold:
                used[img][best] = True
                flags[img][k] = TP
            elif difficult_hit:
                flags[img][k] = IGNORED
    return flags


def pr_curve(tp_flags, scores, n_positive: int) -> tuple[np.ndarray, np.ndarray]:
    """Precision and recall after each detection, in descending score order."""
    tp_flags = np.asarray(tp_flags, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    tp = np.cumsum(tp_flags[order])
    fp = np.cumsum(~tp_flags[order])
    precision = tp / np.maximum(tp + fp, 1)
    recall = tp / n_positive if n_positive > 0 else np.zeros_like(precision)
    return precision, recall


def average_precision(tp_flags, scores, n_positive: int, mode: str = ELEVEN_POINT) -> float:
    """AP of one class.

    An empty class (no positives) scores 1 when nothing was detected and 0
    otherwise.
    """
    if n_positive < 0:
        raise ValueError("n_positive must be >= 0")
    n_det = len(tp_flags)
    if n_positive == 0:
        return 1.0 if n_det == 0 else 0.0
    if n_det == 0:
        return 0.0
    precision, recall = pr_curve(tp_flags, scores, n_positive)
    if mode == ELEVEN_POINT:
        samples = []
        for i in range(11):
            reached = precision[recall >= i / 10]
            samples.append(float(reached.max()) if reached.size else 0.0)
        return math.fsum(samples) / 11
    if mode == ALL_POINT:
        mrec = np.concatenate(([0.0], recall, [1.0]))
        mpre = np.concatenate(([0.0], precision, [0.0]))
        mpre = np.maximum.accumulate(mpre[::-1])[::-1]
        steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
        return math.fsum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1])
    raise ValueError(f"unknown AP mode {mode!r}")


def mean_ap(
    dets: Sequence[Sequence[Detection]],
    gts: Sequence[Sequence[GroundTruth]],
    cfg: EvalConfig = EvalConfig(),
    n_classes: int | None = None,
) -> EvalResult:
    """Per-class AP and their unweighted mean.

    Only classes with at least one non-difficult ground truth take part.
    """
    flags = match_detections(dets, gts, cfg.iou_threshold)
    n_pos: dict[int, int] = defaultdict(int)
    for per_image in gts:
        for gt in per_image:
            if not gt.difficult:
                n_pos[gt.class_id] += 1
    classes = sorted(c for c in n_pos if n_classes is None or c < n_classes)
    per_class, curves = {}, {}
    for c in classes:
        tp, scores = [], []
        for img, k in _global_order(dets, c):
            f = flags[img][k]
            if f == IGNORED:
                continue
            tp.append(f == TP)
            scores.append(dets[img][k].score)
        per_class[c] = average_precision(tp, scores, n_pos[c], cfg.ap_mode)
        curves[c] = pr_curve(tp, scores, n_pos[c])
    value = math.fsum(per_class.values()) / len(per_class) if per_class else 0.0
    return EvalResult(value, per_class, curves)
