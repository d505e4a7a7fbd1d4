"""Annotation parsing, label files, PPM rasters and synthetic datasets.

Images are ``(height, width, 3)`` ``uint8`` numpy arrays throughout.
"""
from __future__ import annotations

import math
import os
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import BadBox, BadLabelLine, DegenerateBox, MalformedXml, Truncated, UnknownClass, UnsupportedFormat
from .geometry import BoxXYXY, BoxYolo, is_valid_label
from .rng import RngStream

VOC_CLASSES = (
    "aeroplane", "bicycle", "bird", "boat", "bottle",
    "bus", "car", "cat", "chair", "cow",
    "diningtable", "dog", "horse", "motorbike", "person",
    "pottedplant", "sheep", "sofa", "train", "tvmonitor",
)

#: environment variable naming a class-table file used as the CLI default
CLASSES_ENV = "YOLOV1_CLASSES"

# Sample labels are snapped to multiples of this, which makes the reflection
# 1 - x exact and therefore flips exact involutions.
LABEL_GRID = 2.0 ** -40


class ClassTable:
    """Ordered class names; the index of a name is its numeric class id."""

    def __init__(self, names: Iterable[str] = VOC_CLASSES):
        self.names = tuple(names)
        if len(set(self.names)) != len(self.names):
            raise ValueError("class names must be unique")
        if any(not n for n in self.names):
            raise ValueError("class names must be non-empty")
        self._index = {n: i for i, n in enumerate(self.names)}

    def __len__(self):
        return len(self.names)

    def __getitem__(self, class_id: int) -> str:
        return self.names[class_id]

    def __eq__(self, other):
        return isinstance(other, ClassTable) and self.names == other.names

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise UnknownClass(name) from None

    @classmethod
    def from_file(cls, path) -> "ClassTable":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(line.strip() for line in lines if line.strip())

    @classmethod
    def from_env(cls) -> "ClassTable":
        path = os.environ.get(CLASSES_ENV)
        return cls.from_file(path) if path else cls()


# --------------------------------------------------------------------------
# VOC XML
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class VocObject:
    name: str
    bndbox: BoxXYXY
    difficult: bool = False


@dataclass(frozen=True)
class VocAnnotation:
    filename: str
    width: int
    height: int
    objects: tuple[VocObject, ...] = ()


def _child_text(node, tag, required=True):
    child = node.find(tag)
    if child is None or child.text is None or not child.text.strip():
        if required:
            raise MalformedXml(f"missing <{tag}> in <{node.tag}>")
        return None
    return child.text.strip()


def _number(text, what):
    try:
        v = float(text)
    except ValueError:
        raise BadBox(f"non-numeric {what}: {text!r}") from None
    if not math.isfinite(v):
        raise BadBox(f"non-finite {what}: {text!r}")
    return v


def parse_voc_xml(text: str, table: ClassTable | None = None) -> VocAnnotation:
    """Parse a VOC annotation document.

    Only the ``annotation/size/object/bndbox`` subset is interpreted.
    Objects flagged ``difficult`` are kept; scoring code decides what to do
    with them.
    """
    table = table or ClassTable()
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise MalformedXml(str(exc)) from None
    if root.tag != "annotation":
        raise MalformedXml(f"root element is <{root.tag}>, expected <annotation>")

    filename = _child_text(root, "filename", required=False) or ""
    size = root.find("size")
    if size is None:
        raise MalformedXml("missing <size>")
    try:
        width = int(float(_child_text(size, "width")))
        height = int(float(_child_text(size, "height")))
    except ValueError:
        raise MalformedXml("non-numeric image size") from None
    if width <= 0 or height <= 0:
        raise MalformedXml(f"image size must be positive, got {width}x{height}")

    objects = []
    for obj in root.findall("object"):
        name = _child_text(obj, "name")
        table.index(name)
        bb = obj.find("bndbox")
        if bb is None:
            raise MalformedXml(f"object {name!r} has no <bndbox>")
        coords = [_number(_child_text(bb, t), t) for t in ("xmin", "ymin", "xmax", "ymax")]
        try:
            box = BoxXYXY(*coords)
        except DegenerateBox as exc:
            raise BadBox(str(exc)) from None
        diff = _child_text(obj, "difficult", required=False)
        objects.append(VocObject(name, box, diff is not None and diff not in ("0", "false")))
    return VocAnnotation(filename, width, height, tuple(objects))


# --------------------------------------------------------------------------
# YOLO label files
# --------------------------------------------------------------------------

def format_label(b: BoxYolo) -> str:
    return f"{b.class_id} {b.cx:.6f} {b.cy:.6f} {b.w:.6f} {b.h:.6f}"


def write_yolo_labels(labels: Iterable[BoxYolo]) -> str:
    return "".join(format_label(b) + "\n" for b in labels)


def read_yolo_labels(text: str, table: ClassTable | None = None) -> list[BoxYolo]:
    """Parse label-file text; blank lines are skipped, line numbers are 1-based."""
    n_classes = len(table) if table is not None else len(VOC_CLASSES)
    out = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != 5:
            raise BadLabelLine(line_no, f"expected 5 fields, got {len(tokens)}")
        try:
            class_id = int(tokens[0])
            cx, cy, w, h = (float(t) for t in tokens[1:])
        except ValueError:
            raise BadLabelLine(line_no, "non-numeric field") from None
        if class_id < 0:
            raise BadLabelLine(line_no, "negative class id")
        box = BoxYolo(class_id, cx, cy, w, h)
        if not is_valid_label(box):
            raise BadLabelLine(line_no, "value out of range")
        if class_id >= n_classes:
            raise UnknownClass(class_id)
        out.append(box)
    return out


# --------------------------------------------------------------------------
# PPM
# --------------------------------------------------------------------------

_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def read_ppm(data: bytes) -> np.ndarray:
    """Decode a binary P6 PPM with maxval 255 into an ``(h, w, 3)`` array."""
    if data[:2] != b"P6":
        raise UnsupportedFormat(f"not a P6 PPM (magic {data[:2]!r})")
    pos = 2
    header = []
    for _ in range(3):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise Truncated("incomplete PPM header")
        header.append(m.group(1))
        pos = m.end()
    try:
        width, height, maxval = (int(t) for t in header)
    except ValueError:
        raise UnsupportedFormat("non-integer PPM header field") from None
    if maxval != 255:
        raise UnsupportedFormat(f"maxval {maxval} not supported")
    if width <= 0 or height <= 0:
        raise UnsupportedFormat(f"bad dimensions {width}x{height}")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise Truncated("missing whitespace after PPM header")
    pos += 1
    n = width * height * 3
    payload = data[pos:pos + n]
    if len(payload) < n:
        raise Truncated(f"expected {n} payload bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3).copy()


def write_ppm(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise UnsupportedFormat(f"expected (h, w, 3) uint8, got {img.shape} {img.dtype}")
    h, w, _ = img.shape
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img).tobytes()


# --------------------------------------------------------------------------
# Samples and the synthetic dataset
# --------------------------------------------------------------------------

def snap(v: float) -> float:
    return round(v / LABEL_GRID) * LABEL_GRID


def _snap_box(b: BoxYolo) -> BoxYolo:
    return BoxYolo(b.class_id, snap(b.cx), snap(b.cy), snap(b.w), snap(b.h))


@dataclass(frozen=True, eq=False)
class Sample:
    """An image with its labels.

    Label coordinates are snapped to a 2**-40 grid on construction (a change
    of at most 5e-13), so that mirroring a box is exact arithmetic.
    """

    image: np.ndarray
    labels: tuple[BoxYolo, ...] = field(default_factory=tuple)

    def __post_init__(self):
        img = np.asarray(self.image)
        if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
            raise ValueError(f"image must be (h, w, 3) uint8, got {img.shape} {img.dtype}")
        object.__setattr__(self, "image", img)
        object.__setattr__(self, "labels", tuple(_snap_box(b) for b in self.labels))

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]

    def same_as(self, other: "Sample") -> bool:
        return (
            self.image.shape == other.image.shape
            and np.array_equal(self.image, other.image)
            and self.labels == other.labels
        )


BACKGROUND = (128, 128, 128)


def class_color(class_id: int) -> tuple[int, int, int]:
    """Stable flat color for a class; hues are spread by the golden ratio."""
    hue = (class_id * 0.618033988749895) % 1.0
    value = 1.0 if class_id % 2 == 0 else 0.7
    r, g, b = _hsv_to_rgb_scalar(hue, 0.85, value)
    return int(r * 255 + 0.5), int(g * 255 + 0.5), int(b * 255 + 0.5)


def _hsv_to_rgb_scalar(h, s, v):
    i = int(h * 6) % 6
    f = h * 6 - int(h * 6)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    return [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]


def generate_synthetic(
    seed: int,
    n_samples: int,
    table: ClassTable | None = None,
    img_size: int = 448,
    grid_size: int = 7,
) -> list[Sample]:
    """Deterministic dataset of flat rectangles on a mid-gray background.

    Each sample holds 1-4 non-overlapping rectangles on integer pixel edges,
    coloured by class, with at most one rectangle center per grid cell.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    table = table or ClassTable()
    rng = RngStream(seed)
    min_side = max(2, img_size // 10)
    max_side = max(min_side, img_size // 2)
    samples = []
    for _ in range(n_samples):
        img = np.empty((img_size, img_size, 3), dtype=np.uint8)
        img[:] = BACKGROUND
        wanted = rng.randint(1, 4)
        rects: list[tuple[int, int, int, int]] = []
        cells: set[tuple[int, int]] = set()
        labels = []
        attempts = 0
        while len(rects) < wanted and attempts < 100:
            attempts += 1
            bw = rng.randint(min_side, max_side)
            bh = rng.randint(min_side, max_side)
            x0 = rng.randint(0, img_size - bw)
            y0 = rng.randint(0, img_size - bh)
            x1, y1 = x0 + bw, y0 + bh
            cell = (
                min(int((y0 + y1) / 2 * grid_size / img_size), grid_size - 1),
                min(int((x0 + x1) / 2 * grid_size / img_size), grid_size - 1),
            )
            if cell in cells:
                continue
            if any(x0 < r[2] and r[0] < x1 and y0 < r[3] and r[1] < y1 for r in rects):
                continue
            class_id = rng.randint(0, len(table) - 1)
            img[y0:y1, x0:x1] = class_color(class_id)
            rects.append((x0, y0, x1, y1))
            cells.add(cell)
            labels.append(BoxYolo(
                class_id,
                (x0 + x1) / (2 * img_size),
                (y0 + y1) / (2 * img_size),
                bw / img_size,
                bh / img_size,
            ))
        samples.append(Sample(img, tuple(labels)))
    return samples


# --------------------------------------------------------------------------
# Dataset layout on disk: images/NAME.ppm + labels/NAME.txt
# --------------------------------------------------------------------------

def atomic_write(path, data: bytes | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    if isinstance(data, str):
        data = data.encode("utf-8")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def write_sample(root, name: str, sample: Sample) -> None:
    root = Path(root)
    atomic_write(root / "images" / f"{name}.ppm", write_ppm(sample.image))
    atomic_write(root / "labels" / f"{name}.txt", write_yolo_labels(sample.labels))


def list_stems(root, sub: str, suffix: str) -> list[str]:
    d = Path(root) / sub
    if not d.is_dir():
        return []
    return sorted(p.stem for p in d.iterdir() if p.suffix == suffix and not p.name.startswith("."))


def read_difficult(root, name: str, n_labels: int) -> list[bool]:
    """Difficult flags from the optional ``labels/NAME.difficult`` sidecar."""
    path = Path(root) / "labels" / f"{name}.difficult"
    if not path.exists():
        return [False] * n_labels
    flags = [line.strip() == "1" for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    if len(flags) != n_labels:
        raise ValueError(f"{path}: {len(flags)} flags for {n_labels} labels")
    return flags


def save_dataset(root, samples: Sequence[Sample], prefix: str = "synth") -> list[str]:
    names = [f"{prefix}_{i:06d}" for i in range(len(samples))]
    for name, s in zip(names, samples):
        write_sample(root, name, s)
    return names
