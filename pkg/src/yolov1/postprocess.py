"""Thresholding, decoding and per-class greedy non-maximum suppression."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

from .geometry import yolo_iou
from .tensor_codec import Detection, TargetTensor, decode


@dataclass(frozen=True)
class NmsConfig:
    iou_threshold: float = 0.45
    conf_threshold: float = 0.20
    max_detections: int = 100

    def __post_init__(self):
        if not (0 <= self.iou_threshold <= 1 and 0 <= self.conf_threshold <= 1):
            raise ValueError("thresholds must lie in [0, 1]")
        if self.max_detections < 1:
            raise ValueError("max_detections must be >= 1")


def nms(dets: Sequence[Detection], iou_threshold: float = 0.45) -> list[Detection]:
    """Greedy NMS within each class.

    A candidate is suppressed when its IoU with an already kept box of the
    same class is strictly greater than ``iou_threshold``.  Equal scores are
    resolved by input position, and the result is ordered by descending
    score, then class id, then input position.
    """
    by_class: dict[int, list[int]] = defaultdict(list)
    for idx, d in enumerate(dets):
        by_class[d.class_id].append(idx)
    kept = []
    for idxs in by_class.values():
        idxs.sort(key=lambda k: (-dets[k].score, k))
        keep: list[int] = []
        for k in idxs:
            if all(yolo_iou(dets[k].box, dets[m].box) <= iou_threshold for m in keep):
                keep.append(k)
        kept.extend(keep)
    kept.sort(key=lambda k: (-dets[k].score, dets[k].class_id, k))
    return [dets[k] for k in kept]


def detect(pred: TargetTensor, cfg: NmsConfig = NmsConfig()) -> list[Detection]:
    return nms(decode(pred, cfg.conf_threshold), cfg.iou_threshold)[: cfg.max_detections]
