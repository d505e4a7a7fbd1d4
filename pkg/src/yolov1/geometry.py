"""Box representations, coordinate conversions and IoU.

Two box flavours are used throughout the package:

* :class:`BoxXYXY` -- absolute corner coordinates in pixels (VOC style).
* :class:`BoxYolo` -- class id plus a normalized center-format box.

All arithmetic is binary64.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DegenerateBox

#: boxes whose clamped normalized area falls below this are discarded
MIN_AREA = 1e-4
#: tolerance on the extent check for persisted labels
LABEL_TOL = 1e-6


@dataclass(frozen=True)
class BoxXYXY:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        vals = (self.xmin, self.ymin, self.xmax, self.ymax)
        if not all(math.isfinite(v) for v in vals):
            raise DegenerateBox(f"non-finite box {vals}")
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise DegenerateBox(f"empty or inverted box {vals}")

    @property
    def area(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)

    def translate(self, dx: float, dy: float) -> "BoxXYXY":
        return BoxXYXY(self.xmin + dx, self.ymin + dy, self.xmax + dx, self.ymax + dy)


@dataclass(frozen=True, order=True)
class BoxYolo:
    """Normalized center-format box.

    Construction is deliberately lenient: augmentation produces boxes that
    leave the unit square before :func:`clamp_box` cleans them up.  Use
    :func:`is_valid_label` to check the persisted-label invariants.
    """

    class_id: int
    cx: float
    cy: float
    w: float
    h: float

    def corners(self) -> tuple[float, float, float, float]:
        hw, hh = self.w / 2, self.h / 2
        return self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh

    def to_xyxy(self) -> BoxXYXY:
        """Corner box in normalized units."""
        return BoxXYXY(*self.corners())

    def fields(self) -> tuple[float, float, float, float]:
        return self.cx, self.cy, self.w, self.h


def iou(a: BoxXYXY, b: BoxXYXY) -> float:
    ix = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    iy = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def yolo_iou(a: BoxYolo, b: BoxYolo) -> float:
    """IoU of two normalized boxes (invariant to the image aspect ratio)."""
    return iou(a.to_xyxy(), b.to_xyxy())


def voc_to_yolo(b: BoxXYXY, img_w: float, img_h: float, class_id: int = 0) -> BoxYolo:
    """Convert a pixel corner box to a normalized YOLO box.

    The box is clamped to the image first, which absorbs the usual one pixel
    of slack in VOC annotations.  Edges are treated as continuous positions;
    no ``+1`` correction is applied.
    """
    if img_w <= 0 or img_h <= 0:
        raise ValueError(f"image size must be positive, got {img_w}x{img_h}")
    x0, x1 = max(b.xmin, 0.0), min(b.xmax, float(img_w))
    y0, y1 = max(b.ymin, 0.0), min(b.ymax, float(img_h))
    if x1 - x0 <= 0 or y1 - y0 <= 0:
        raise DegenerateBox(f"box {b} has no extent inside {img_w}x{img_h}")
    return BoxYolo(
        class_id,
        (x0 + x1) / (2 * img_w),
        (y0 + y1) / (2 * img_h),
        (x1 - x0) / img_w,
        (y1 - y0) / img_h,
    )


def yolo_to_voc(b: BoxYolo, img_w: float, img_h: float) -> BoxXYXY:
    hw, hh = b.w * img_w / 2, b.h * img_h / 2
    cx, cy = b.cx * img_w, b.cy * img_h
    return BoxXYXY(cx - hw, cy - hh, cx + hw, cy + hh)


def clamp_box(b: BoxYolo) -> BoxYolo | None:
    """Intersect a box with the unit square.

    Returns ``None`` when nothing (or less than :data:`MIN_AREA`) survives.
    Boxes already inside the square are returned unchanged.
    """
    x0, y0, x1, y1 = b.corners()
    if not all(math.isfinite(v) for v in (x0, y0, x1, y1)):
        return None
    if x0 >= 0 and y0 >= 0 and x1 <= 1 and y1 <= 1:
        if b.w * b.h < MIN_AREA or b.w <= 0 or b.h <= 0:
            return None
        return b
    x0, y0 = max(x0, 0.0), max(y0, 0.0)
    x1, y1 = min(x1, 1.0), min(y1, 1.0)
    w, h = x1 - x0, y1 - y0
    if w <= 0 or h <= 0 or w * h < MIN_AREA:
        return None
    return BoxYolo(b.class_id, (x0 + x1) / 2, (y0 + y1) / 2, w, h)


def is_valid_label(b: BoxYolo, tol: float = LABEL_TOL) -> bool:
    """Check the invariants every persisted label must satisfy."""
    if not all(math.isfinite(v) for v in b.fields()):
        return False
    if b.class_id < 0:
        return False
    if not (0 <= b.cx <= 1 and 0 <= b.cy <= 1 and 0 < b.w <= 1 and 0 < b.h <= 1):
        return False
    x0, y0, x1, y1 = b.corners()
    return x0 >= -tol and y0 >= -tol and x1 <= 1 + tol and y1 <= 1 + tol
