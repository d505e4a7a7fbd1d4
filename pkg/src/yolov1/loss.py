"""The YOLOv1 sum-squared composite loss and its gradient w.r.t. predictions.

Terms (``b*`` is the responsible slot of an object cell, chosen by the
highest IoU between the decoded predicted boxes and the ground truth):

* coord: ``lambda_coord * sum (x-x')^2 + (y-y')^2 + (sqrt w - sqrt w')^2 + (sqrt h - sqrt h')^2`` over b*
* obj: ``sum (conf_b* - 1)^2``
* noobj: ``lambda_noobj * sum conf^2`` over every other slot, in every cell
* classification: ``sum_c (p_c - p'_c)^2`` over object cells
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidTarget, ShapeMismatch
from .tensor_codec import TargetTensor


@dataclass(frozen=True)
class LossParams:
    lambda_coord: float = 5.0
    lambda_noobj: float = 0.5

    def __post_init__(self):
        if self.lambda_coord < 0 or self.lambda_noobj < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class LossBreakdown:
    coord: float
    obj: float
    noobj: float
    classification: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return {
            "coord": self.coord,
            "obj": self.obj,
            "noobj": self.noobj,
            "class": self.classification,
            "total": self.total,
        }


def validate_target(target: TargetTensor) -> None:
    boxes, cls = target.boxes(), target.classes()
    conf = boxes[..., 4]
    if not np.all((conf == 0) | (conf == 1)):
        raise InvalidTarget("target confidences must be 0 or 1")
    if not np.all((cls == 0) | (cls == 1)) or np.any(cls.sum(axis=-1) > 1):
        raise InvalidTarget("target class vectors must be one-hot or all-zero")
    live = boxes[conf == 1]
    if live.size:
        x, y, w, h = live[:, 0], live[:, 1], live[:, 2], live[:, 3]
        if np.any((x < 0) | (x >= 1) | (y < 0) | (y >= 1)):
            raise InvalidTarget("target cell offsets must lie in [0, 1)")
        if np.any((w <= 0) | (w > 1) | (h <= 0) | (h > 1)):
            raise InvalidTarget("target sizes must lie in (0, 1]")


def _grid_ious(pred_boxes: np.ndarray, gt: np.ndarray, S: int) -> np.ndarray:
    """IoU of every predicted slot against its cell's ground truth box.

    ``pred_boxes`` is ``(S, S, B, >=4)``, ``gt`` is ``(S, S, 4)``; both are in
    cell-offset form and decoded here.  Non-positive sizes give IoU 0.
    """
    col = np.arange(S)[None, :, None]
    row = np.arange(S)[:, None, None]
    px = (col + pred_boxes[..., 0]) / S
    py = (row + pred_boxes[..., 1]) / S
    pw = np.maximum(pred_boxes[..., 2], 0.0)
    ph = np.maximum(pred_boxes[..., 3], 0.0)
    gx = (col[..., 0] + gt[..., 0]) / S
    gy = (row[..., 0] + gt[..., 1]) / S
    gx, gy = gx[..., None], gy[..., None]
    gw, gh = gt[..., None, 2], gt[..., None, 3]
    iw = np.minimum(px + pw / 2, gx + gw / 2) - np.maximum(px - pw / 2, gx - gw / 2)
    ih = np.minimum(py + ph / 2, gy + gh / 2) - np.maximum(py - ph / 2, gy - gh / 2)
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = pw * ph + gw * gh - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return np.nan_to_num(out, nan=0.0)


def responsibility(pred: TargetTensor, target: TargetTensor) -> np.ndarray:
    """Boolean ``(S, S, B)`` mask of responsible slots (ties go to the lowest slot)."""
    cfg = target.cfg
    tboxes = target.boxes()
    obj_cell = np.any(tboxes[..., 4] == 1, axis=-1)
    first = np.argmax(tboxes[..., 4] == 1, axis=-1)
    gt = np.take_along_axis(tboxes, first[..., None, None], axis=2)[:, :, 0, :4]
    ious = _grid_ious(pred.boxes(), gt, cfg.S)
    best = np.argmax(ious, axis=-1)
    mask = np.zeros(ious.shape, dtype=bool)
    np.put_along_axis(mask, best[..., None], True, axis=-1)
    return mask & obj_cell[..., None]


def _prepare(pred, target):
    if pred.cfg != target.cfg:
        raise ShapeMismatch(f"prediction grid {pred.cfg} != target grid {target.cfg}")
    validate_target(target)
    return responsibility(pred, target)


def yolo_loss(pred: TargetTensor, target: TargetTensor, params: LossParams = LossParams()) -> LossBreakdown:
    resp = _prepare(pred, target)
    pb, tb = pred.boxes(), target.boxes()
    obj_cell = resp.any(axis=-1)

    dxy = (pb[..., :2] - tb[..., :2]) ** 2
    dwh = (np.sqrt(np.maximum(pb[..., 2:4], 0.0)) - np.sqrt(np.maximum(tb[..., 2:4], 0.0))) ** 2
    coord = params.lambda_coord * float(np.sum((dxy.sum(-1) + dwh.sum(-1))[resp]))
    obj = float(np.sum((pb[..., 4][resp] - 1.0) ** 2))
    noobj = params.lambda_noobj * float(np.sum(pb[..., 4][~resp] ** 2))
    classification = float(np.sum((pred.classes() - target.classes())[obj_cell] ** 2))
    return LossBreakdown(coord, obj, noobj, classification, coord + obj + noobj + classification)


def yolo_loss_grad(pred: TargetTensor, target: TargetTensor, params: LossParams = LossParams()) -> np.ndarray:
    """Gradient of the total loss, same shape as ``pred.values``.

    Responsibility is held fixed.  Predicted sizes ``<= 0`` get zero gradient.
    """
    resp = _prepare(pred, target)
    cfg = pred.cfg
    pb, tb = pred.boxes(), target.boxes()
    obj_cell = resp.any(axis=-1)

    grad = np.zeros(cfg.shape)
    gb = grad[..., : cfg.B * 5].reshape(cfg.S, cfg.S, cfg.B, 5)
    lc = params.lambda_coord

    gxy = 2 * lc * (pb[..., :2] - tb[..., :2])
    pos = pb[..., 2:4] > 0
    root = np.sqrt(np.where(pos, pb[..., 2:4], 1.0))
    gwh = np.where(pos, lc * (root - np.sqrt(np.maximum(tb[..., 2:4], 0.0))) / root, 0.0)
    gb[..., :2] = np.where(resp[..., None], gxy, 0.0)
    gb[..., 2:4] = np.where(resp[..., None], gwh, 0.0)
    gb[..., 4] = np.where(resp, 2 * (pb[..., 4] - 1.0), 2 * params.lambda_noobj * pb[..., 4])
    grad[..., cfg.B * 5:] = np.where(obj_cell[..., None], 2 * (pred.classes() - target.classes()), 0.0)
    return grad


def batch_loss(
    preds: Sequence[TargetTensor], targets: Sequence[TargetTensor], params: LossParams = LossParams()
) -> LossBreakdown:
    """Mean of per-sample breakdowns."""
    if len(preds) != len(targets) or not preds:
        raise ShapeMismatch("need equally many (>= 1) predictions and targets")
    parts = np.array([list(yolo_loss(p, t, params).as_dict().values()) for p, t in zip(preds, targets)])
    coord, obj, noobj, cls, _ = parts.mean(axis=0)
    return LossBreakdown(coord, obj, noobj, cls, coord + obj + noobj + cls)


def batch_loss_grad(
    preds: Sequence[TargetTensor], targets: Sequence[TargetTensor], params: LossParams = LossParams()
) -> list[np.ndarray]:
    n = len(preds)
    return [yolo_loss_grad(p, t, params) / n for p, t in zip(preds, targets)]
