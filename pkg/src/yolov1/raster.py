"""Small raster utilities shared by augmentation, inference and the CLI."""
from __future__ import annotations

from typing import Iterable

import numpy as np

from .geometry import BoxYolo


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Round half up and saturate to ``[0, 255]``."""
    return np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)


def bilinear_sample(img: np.ndarray, sx: np.ndarray, sy: np.ndarray, fill=None) -> np.ndarray:
    """Sample ``img`` (h, w, c) at continuous pixel positions.

    Pixel ``(i, j)`` has its center at ``(j + 0.5, i + 0.5)``.  Positions
    outside the image blend toward ``fill``; with ``fill=None`` the border
    pixels are repeated instead.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w, c = img.shape
    if fill is None:
        src = np.pad(img, ((1, 1), (1, 1), (0, 0)), mode="edge")
    else:
        src = np.empty((h + 2, w + 2, c))
        src[:] = np.asarray(fill, dtype=np.float64)
        src[1:-1, 1:-1] = img
    fx, fy = sx - 0.5, sy - 0.5
    x0, y0 = np.floor(fx), np.floor(fy)
    ax, ay = (fx - x0)[..., None], (fy - y0)[..., None]
    x0 = x0.astype(np.int64) + 1
    y0 = y0.astype(np.int64) + 1
    xa, xb = np.clip(x0, 0, w + 1), np.clip(x0 + 1, 0, w + 1)
    ya, yb = np.clip(y0, 0, h + 1), np.clip(y0 + 1, 0, h + 1)
    top = src[ya, xa] * (1 - ax) + src[ya, xb] * ax
    bottom = src[yb, xa] * (1 - ax) + src[yb, xb] * ax
    return top * (1 - ay) + bottom * ay


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-center bilinear resize with edge clamping; returns float64."""
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return np.asarray(img, dtype=np.float64)
    sy = (np.arange(out_h) + 0.5) * (h / out_h)
    sx = (np.arange(out_w) + 0.5) * (w / out_w)
    gx, gy = np.meshgrid(sx, sy)
    return bilinear_sample(img, gx, gy)


def draw_boxes(img: np.ndarray, boxes: Iterable[BoxYolo], colors, thickness: int = 2) -> np.ndarray:
    """Copy of ``img`` with box outlines drawn inside each box edge.

    ``colors`` maps a class id to an RGB triple.
    """
    out = np.array(img, dtype=np.uint8, copy=True)
    h, w = out.shape[:2]
    for b in boxes:
        x0, y0, x1, y1 = b.corners()
        xa, xb = int(np.clip(round(x0 * w), 0, w)), int(np.clip(round(x1 * w), 0, w))
        ya, yb = int(np.clip(round(y0 * h), 0, h)), int(np.clip(round(y1 * h), 0, h))
        if xb <= xa or yb <= ya:
            continue
        c = colors(b.class_id)
        t = thickness
        out[ya:min(ya + t, yb), xa:xb] = c
        out[max(yb - t, ya):yb, xa:xb] = c
        out[ya:yb, xa:min(xa + t, xb)] = c
        out[ya:yb, max(xb - t, xa):xb] = c
    return out
