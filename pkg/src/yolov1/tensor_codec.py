"""Encode labels into the S x S x (B*5 + C) grid tensor and decode it back.

Per-cell layout: ``B`` blocks of ``(x, y, w, h, conf)`` followed by ``C``
class scores.  ``x, y`` are offsets of the object center inside its cell,
``w, h`` are image-relative.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ClassOutOfRange, ShapeMismatch, Truncated
from .geometry import BoxYolo, clamp_box


@dataclass(frozen=True)
class GridConfig:
    S: int = 7
    B: int = 2
    C: int = 20

    def __post_init__(self):
        if self.S < 1 or self.B < 1 or self.C < 1:
            raise ValueError(f"S, B, C must be >= 1, got {self}")

    @property
    def depth(self) -> int:
        return self.B * 5 + self.C

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.S, self.S, self.depth

    @property
    def size(self) -> int:
        return self.S * self.S * self.depth


@dataclass(frozen=True, eq=False)
class TargetTensor:
    cfg: GridConfig
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.cfg.shape:
            if v.size == self.cfg.size and v.ndim == 1:
                v = v.reshape(self.cfg.shape)
            else:
                raise ShapeMismatch(f"tensor shape {v.shape} does not match {self.cfg.shape}")
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, cfg: GridConfig) -> "TargetTensor":
        return cls(cfg, np.zeros(cfg.shape))

    def boxes(self) -> np.ndarray:
        """View of the box blocks, shape ``(S, S, B, 5)``."""
        cfg = self.cfg
        return self.values[..., : cfg.B * 5].reshape(cfg.S, cfg.S, cfg.B, 5)

    def classes(self) -> np.ndarray:
        return self.values[..., self.cfg.B * 5:]

    def to_bytes(self) -> bytes:
        cfg = self.cfg
        return struct.pack("<3i", cfg.S, cfg.B, cfg.C) + self.values.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "TargetTensor":
        if len(data) < 12:
            raise Truncated("tensor header needs 12 bytes")
        S, B, C = struct.unpack_from("<3i", data)
        cfg = GridConfig(S, B, C)
        n = cfg.size * 8
        if len(data) - 12 < n:
            raise Truncated(f"expected {n} value bytes, got {len(data) - 12}")
        if len(data) - 12 > n:
            raise ShapeMismatch(f"{len(data) - 12 - n} trailing bytes after tensor")
        return cls(cfg, np.frombuffer(data, dtype="<f8", offset=12).reshape(cfg.shape).astype(np.float64))


@dataclass(frozen=True)
class Detection:
    class_id: int
    score: float
    box: BoxYolo


def cell_of(cx: float, cy: float, S: int) -> tuple[int, int]:
    """``(row, col)`` of the cell owning a center; cells are half-open."""
    return min(int(math.floor(cy * S)), S - 1), min(int(math.floor(cx * S)), S - 1)


def encode(labels: Iterable[BoxYolo], cfg: GridConfig = GridConfig()) -> TargetTensor:
    """Build the training target for one image.

    When several centers fall in one cell the largest box wins (first one on
    equal area).  The geometry is copied into every box slot of the cell but
    only the first slot carries ``conf = 1``, so a prediction equal to the
    target scores zero loss; the loss itself picks the responsible slot.
    """
    owner: dict[tuple[int, int], BoxYolo] = {}
    for b in labels:
        if not 0 <= b.class_id < cfg.C:
            raise ClassOutOfRange(f"class id {b.class_id} outside [0, {cfg.C})")
        cell = cell_of(b.cx, b.cy, cfg.S)
        prev = owner.get(cell)
        if prev is None or b.w * b.h > prev.w * prev.h:
            owner[cell] = b
    t = np.zeros(cfg.shape)
    for (i, j), b in owner.items():
        block = (b.cx * cfg.S - j, b.cy * cfg.S - i, b.w, b.h, 0.0)
        for slot in range(cfg.B):
            t[i, j, slot * 5: slot * 5 + 5] = block
        t[i, j, 4] = 1.0
        t[i, j, cfg.B * 5 + b.class_id] = 1.0
    return TargetTensor(cfg, t)


def decode(pred: TargetTensor, conf_threshold: float = 0.5) -> list[Detection]:
    """Turn a grid tensor into image-relative detections (no NMS).

    Score is ``conf * max class score``.  Slots of one cell that decode to
    an identical detection are reported once.
    """
    if not isinstance(pred, TargetTensor):
        raise ShapeMismatch("decode expects a TargetTensor")
    cfg = pred.cfg
    S = cfg.S
    boxes = pred.boxes()
    cls = pred.classes()
    best_cls = np.argmax(cls, axis=-1)
    best_p = np.max(cls, axis=-1)
    scores = boxes[..., 4] * best_p[..., None]
    out = []
    seen: dict[tuple[int, int], list[Detection]] = {}
    for i, j, b in zip(*np.nonzero(scores >= conf_threshold)):
        i, j = int(i), int(j)
        x, y, w, h, _ = (float(v) for v in boxes[i, j, b])
        c = int(best_cls[i, j])
        box = clamp_box(BoxYolo(c, (j + x) / S, (i + y) / S, w, h))
        if box is None:
            continue
        det = Detection(c, float(scores[i, j, b]), box)
        in_cell = seen.setdefault((i, j), [])
        if det in in_cell:
            continue
        in_cell.append(det)
        out.append(det)
    return out
