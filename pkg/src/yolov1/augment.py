"""Seedable augmentations that move bounding boxes along with the pixels.

Pixel-only stages (color jitter, blur, grayscale) never touch labels.
Geometric stages (flips, rotation, scale) transform every box, clamp it to
the image and drop what no longer fits.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .dataset_io import BACKGROUND, Sample
from .errors import BadFactor
from .geometry import BoxYolo, clamp_box
from .raster import bilinear_sample, to_uint8
from .rng import RngStream

LUMA = np.array([0.299, 0.587, 0.114])


# --------------------------------------------------------------------------
# pixel-only stages
# --------------------------------------------------------------------------

def _luma(img: np.ndarray) -> np.ndarray:
    return img @ LUMA


def adjust_brightness(img: np.ndarray, factor: float) -> np.ndarray:
    return np.clip(img * factor, 0, 255)


def adjust_contrast(img: np.ndarray, factor: float) -> np.ndarray:
    mean = float(_luma(img).mean())
    return np.clip((img - mean) * factor + mean, 0, 255)


def adjust_saturation(img: np.ndarray, factor: float) -> np.ndarray:
    gray = _luma(img)[..., None]
    return np.clip((img - gray) * factor + gray, 0, 255)


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Vectorized RGB -> HSV, all channels in [0, 1]."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    delta = maxc - minc
    safe = np.where(delta > 0, delta, 1.0)
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)
    rc, gc, bc = (maxc - r) / safe, (maxc - g) / safe, (maxc - b) / safe
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, maxc], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    i = i.astype(np.int64) % 6
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    choices = [
        np.stack(c, axis=-1)
        for c in ((v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q))
    ]
    return np.choose(i[..., None], choices)


def adjust_hue(img: np.ndarray, shift: float) -> np.ndarray:
    """Rotate hue by ``shift`` turns."""
    hsv = rgb_to_hsv(img / 255.0)
    hsv[..., 0] = (hsv[..., 0] + shift) % 1.0
    return np.clip(hsv_to_rgb(hsv) * 255.0, 0, 255)


def color_jitter(img: np.ndarray, brightness: float, contrast: float, saturation: float,
                 hue: float, rng) -> np.ndarray:
    """Random brightness, contrast, saturation and hue, applied in that order.

    A zero factor disables its adjustment and consumes no random draw.
    """
    if min(brightness, contrast, saturation, hue) < 0 or hue > 0.5:
        raise ValueError("jitter factors must be >= 0 and hue <= 0.5")
    out = np.asarray(img, dtype=np.float64)
    touched = False
    if brightness > 0:
        out = adjust_brightness(out, rng.uniform(max(0.0, 1 - brightness), 1 + brightness))
        touched = True
    if contrast > 0:
        out = adjust_contrast(out, rng.uniform(max(0.0, 1 - contrast), 1 + contrast))
        touched = True
    if saturation > 0:
        out = adjust_saturation(out, rng.uniform(max(0.0, 1 - saturation), 1 + saturation))
        touched = True
    if hue > 0:
        out = adjust_hue(out, rng.uniform(-hue, hue))
        touched = True
    return to_uint8(out) if touched else np.array(img, copy=True)


def gaussian_kernel(kernel: int, sigma: float) -> np.ndarray:
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError("kernel size must be odd and positive")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    d = np.arange(kernel) - kernel // 2
    k = np.exp(-(d ** 2) / (2 * sigma ** 2))
    return k / k.sum()


def gaussian_filter(arr: np.ndarray, sigma: float, kernel: int = 3) -> np.ndarray:
    """Separable Gaussian over the two leading axes, clamp-to-edge borders."""
    k = gaussian_kernel(kernel, sigma)
    r = kernel // 2
    arr = np.asarray(arr, dtype=np.float64)
    pad = [(r, r), (r, r)] + [(0, 0)] * (arr.ndim - 2)
    p = np.pad(arr, pad, mode="edge")
    h, w = arr.shape[:2]
    rows = sum(k[i] * p[i:i + h] for i in range(kernel))
    return sum(k[i] * rows[:, i:i + w] for i in range(kernel))


def gaussian_blur(img: np.ndarray, sigma: float, kernel: int = 3) -> np.ndarray:
    return to_uint8(gaussian_filter(img, sigma, kernel))


def grayscale(img: np.ndarray) -> np.ndarray:
    gray = to_uint8(_luma(np.asarray(img, dtype=np.float64)))
    return np.repeat(gray[..., None], 3, axis=-1)


# --------------------------------------------------------------------------
# geometric stages
# --------------------------------------------------------------------------

def hflip(sample: Sample) -> Sample:
    labels = [BoxYolo(b.class_id, 1.0 - b.cx, b.cy, b.w, b.h) for b in sample.labels]
    return Sample(sample.image[:, ::-1].copy(), tuple(labels))


def vflip(sample: Sample) -> Sample:
    labels = [BoxYolo(b.class_id, b.cx, 1.0 - b.cy, b.w, b.h) for b in sample.labels]
    return Sample(sample.image[::-1].copy(), tuple(labels))


def _pixel_grid(h: int, w: int):
    gx, gy = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    return gx - w / 2, gy - h / 2


def rotate_box(b: BoxYolo, angle_degrees: float, img_w: int, img_h: int) -> BoxYolo | None:
    """Axis-aligned hull of a box rotated about the image center, clamped."""
    t = math.radians(angle_degrees)
    c, s = math.cos(t), math.sin(t)
    x0, y0, x1, y1 = b.corners()
    xs, ys = [], []
    for nx, ny in ((x0, y0), (x1, y0), (x0, y1), (x1, y1)):
        dx, dy = (nx - 0.5) * img_w, (ny - 0.5) * img_h
        xs.append(dx * c + dy * s)
        ys.append(-dx * s + dy * c)
    lo_x, hi_x = min(xs) / img_w + 0.5, max(xs) / img_w + 0.5
    lo_y, hi_y = min(ys) / img_h + 0.5, max(ys) / img_h + 0.5
    hull = BoxYolo(b.class_id, (lo_x + hi_x) / 2, (lo_y + hi_y) / 2, hi_x - lo_x, hi_y - lo_y)
    return clamp_box(hull)


def rotation_jitter(sample: Sample, angle_degrees: float) -> Sample:
    """Rotate counter-clockwise (as displayed) about the image center.

    Uncovered pixels become mid-gray.
    """
    if abs(angle_degrees) > 45:
        raise ValueError("rotation angle must be within +-45 degrees")
    if angle_degrees == 0:
        return Sample(sample.image.copy(), sample.labels)
    h, w = sample.height, sample.width
    t = math.radians(angle_degrees)
    c, s = math.cos(t), math.sin(t)
    dx, dy = _pixel_grid(h, w)
    sx = dx * c - dy * s + w / 2
    sy = dx * s + dy * c + h / 2
    img = to_uint8(bilinear_sample(sample.image, sx, sy, fill=BACKGROUND))
    labels = (rotate_box(b, angle_degrees, w, h) for b in sample.labels)
    return Sample(img, tuple(b for b in labels if b is not None))


def scale_jitter(sample: Sample, factor: float) -> Sample:
    """Upscale about the center by ``factor`` and crop back to the original size."""
    if not 1.0 <= factor <= 1.2:
        raise BadFactor(f"scale factor {factor} outside [1, 1.2]")
    if factor == 1.0:
        return Sample(sample.image.copy(), sample.labels)
    h, w = sample.height, sample.width
    dx, dy = _pixel_grid(h, w)
    img = to_uint8(bilinear_sample(sample.image, dx / factor + w / 2, dy / factor + h / 2))
    labels = []
    for b in sample.labels:
        scaled = clamp_box(BoxYolo(
            b.class_id, 0.5 + (b.cx - 0.5) * factor, 0.5 + (b.cy - 0.5) * factor,
            b.w * factor, b.h * factor,
        ))
        if scaled is not None:
            labels.append(scaled)
    return Sample(img, tuple(labels))


# --------------------------------------------------------------------------
# pipeline
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentPipeline:
    """Stage parameters; stages always run in the order of the fields below."""

    jitter_p: float = 1.0
    brightness: float = 0.2
    contrast: float = 0.5
    saturation: float = 0.7
    hue: float = 0.07
    blur_p: float = 0.1
    blur_kernel: int = 3
    blur_sigma_min: float = 0.1
    blur_sigma_max: float = 2.0
    grayscale_p: float = 0.1
    hflip_p: float = 0.5
    vflip_p: float = 0.05
    rotation_p: float = 0.5
    rotation_max_degrees: float = 10.0
    scale_p: float = 0.0
    scale_max: float = 1.2

    def __post_init__(self):
        for f in fields(self):
            if f.name.endswith("_p") and not 0 <= getattr(self, f.name) <= 1:
                raise ValueError(f"{f.name} must lie in [0, 1]")
        if not 0 < self.blur_sigma_min <= self.blur_sigma_max:
            raise ValueError("blur sigma range must be positive and ordered")
        if not 0 <= self.rotation_max_degrees <= 45:
            raise ValueError("rotation_max_degrees must lie in [0, 45]")
        if not 1.0 <= self.scale_max <= 1.2:
            raise BadFactor("scale_max must lie in [1, 1.2]")

    @classmethod
    def identity(cls) -> "AugmentPipeline":
        return cls(jitter_p=0, blur_p=0, grayscale_p=0, hflip_p=0, vflip_p=0, rotation_p=0, scale_p=0)


def parse_pipeline_config(text: str, base: AugmentPipeline | None = None) -> AugmentPipeline:
    """Read ``key = value`` lines (``#`` starts a comment) over ``base``."""
    types = {f.name: f.type for f in fields(AugmentPipeline)}
    updates = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep or key not in types:
            raise ValueError(f"line {line_no}: unknown or malformed setting {raw.strip()!r}")
        updates[key] = int(value) if types[key] in (int, "int") else float(value)
    return replace(base or AugmentPipeline(), **updates)


def format_pipeline_config(p: AugmentPipeline) -> str:
    return "".join(f"{k} = {v}\n" for k, v in asdict(p).items())


def apply_pipeline(sample: Sample, pipeline: AugmentPipeline, rng: RngStream) -> Sample:
    p = pipeline
    img = sample.image
    if rng.random() < p.jitter_p:
        img = color_jitter(img, p.brightness, p.contrast, p.saturation, p.hue, rng)
    if rng.random() < p.blur_p:
        img = gaussian_blur(img, rng.uniform(p.blur_sigma_min, p.blur_sigma_max), p.blur_kernel)
    if rng.random() < p.grayscale_p:
        img = grayscale(img)
    out = Sample(img, sample.labels) if img is not sample.image else sample
    if rng.random() < p.hflip_p:
        out = hflip(out)
    if rng.random() < p.vflip_p:
        out = vflip(out)
    if rng.random() < p.rotation_p:
        out = rotation_jitter(out, rng.uniform(-p.rotation_max_degrees, p.rotation_max_degrees))
    if rng.random() < p.scale_p:
        out = scale_jitter(out, rng.uniform(1.0, p.scale_max))
    return out
