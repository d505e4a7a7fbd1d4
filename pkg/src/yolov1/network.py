"""Architecture definitions and a forward-only CPU inference engine.

Activations are kept channel-last ``(h, w, c)`` in binary64.  Parameters
follow the usual deep-learning layout: conv weights ``(out, in, k, k)``,
fully connected weights ``(out, in)``, and ``flatten`` emits values in
channel-major ``(c, h, w)`` order.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Sequence

import numpy as np

from .errors import BadMagic, DimensionMismatch, ShapeMismatch, ShapeUnderflow, Truncated, UnknownArchitecture, WeightMismatch
from .raster import resize_bilinear
from .tensor_codec import GridConfig, TargetTensor

ACTIVATIONS = ("relu", "leaky_relu", "silu", "linear")
LAYER_KINDS = ("conv", "maxpool", "adaptive_avg_pool", "flatten", "fully_connected", "dropout")
LEAKY_SLOPE = 0.1
MAGIC = b"YWT1"


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out_channels: int = 0
    kernel: int = 1
    stride: int = 1
    padding: int = 0
    activation: str = "linear"
    out_h: int = 0
    out_w: int = 0
    out_features: int = 0
    rate: float = 0.0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.kind == "conv" and (self.out_channels < 1 or self.kernel < 1 or self.stride < 1 or self.padding < 0):
            raise ValueError(f"bad conv parameters {self}")
        if self.kind == "maxpool" and (self.kernel < 1 or self.stride < 1):
            raise ValueError(f"bad maxpool parameters {self}")
        if self.kind == "adaptive_avg_pool" and (self.out_h < 1 or self.out_w < 1):
            raise ValueError(f"bad adaptive pool size {self}")
        if self.kind == "fully_connected" and self.out_features < 1:
            raise ValueError(f"bad fully connected width {self}")
        if self.kind == "dropout" and not 0 <= self.rate < 1:
            raise ValueError("dropout rate must lie in [0, 1)")

    @property
    def has_params(self) -> bool:
        return self.kind in ("conv", "fully_connected")

    def as_dict(self) -> dict:
        keep = {
            "conv": ("out_channels", "kernel", "stride", "padding", "activation"),
            "maxpool": ("kernel", "stride"),
            "adaptive_avg_pool": ("out_h", "out_w"),
            "flatten": (),
            "fully_connected": ("out_features", "activation"),
            "dropout": ("rate",),
        }[self.kind]
        return {"kind": self.kind, **{k: getattr(self, k) for k in keep}}


def conv(out_channels, kernel, stride=1, activation="leaky_relu", padding=None) -> LayerSpec:
    pad = kernel // 2 if padding is None else padding
    return LayerSpec("conv", out_channels=out_channels, kernel=kernel, stride=stride, padding=pad,
                     activation=activation)


def maxpool(kernel=2, stride=2) -> LayerSpec:
    return LayerSpec("maxpool", kernel=kernel, stride=stride)


def fc(out_features, activation="linear") -> LayerSpec:
    return LayerSpec("fully_connected", out_features=out_features, activation=activation)


FLATTEN = LayerSpec("flatten")


@dataclass(frozen=True)
class ArchitectureDef:
    name: str
    layers: tuple[LayerSpec, ...]
    input_h: int = 448
    input_w: int = 448
    input_c: int = 3
    grid: GridConfig = field(default_factory=GridConfig)

    @property
    def conv_layers(self) -> list[LayerSpec]:
        return [l for l in self.layers if l.kind == "conv"]

    @property
    def fc_layers(self) -> list[LayerSpec]:
        return [l for l in self.layers if l.kind == "fully_connected"]

    def as_dict(self) -> dict:
        g = self.grid
        return {
            "name": self.name,
            "input": [self.input_h, self.input_w, self.input_c],
            "grid": [g.S, g.B, g.C],
            "layers": [l.as_dict() for l in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureDef":
        h, w, c = d.get("input", (448, 448, 3))
        grid = GridConfig(*d.get("grid", (7, 2, 20)))
        return cls(d["name"], tuple(LayerSpec(**l) for l in d["layers"]), h, w, c, grid)

    @classmethod
    def from_json(cls, text: str) -> "ArchitectureDef":
        return cls.from_dict(json.loads(text))


def _full24() -> tuple[LayerSpec, ...]:
    layers = [conv(64, 7, stride=2), maxpool(), conv(192, 3), maxpool(),
              conv(128, 1), conv(256, 3), conv(256, 1), conv(512, 3), maxpool()]
    for _ in range(4):
        layers += [conv(256, 1), conv(512, 3)]
    layers += [conv(512, 1), conv(1024, 3), maxpool()]
    for _ in range(2):
        layers += [conv(512, 1), conv(1024, 3)]
    layers += [conv(1024, 3), conv(1024, 3, stride=2), conv(1024, 3), conv(1024, 3)]
    layers += [FLATTEN, fc(4096, "leaky_relu"), LayerSpec("dropout", rate=0.5), fc(1470)]
    return tuple(layers)


def _tiny9() -> tuple[LayerSpec, ...]:
    layers = []
    for i, width in enumerate((16, 32, 64, 128, 256, 512, 1024, 1024, 1024)):
        layers.append(conv(width, 3))
        if i < 6:
            layers.append(maxpool())
    layers += [FLATTEN, fc(2048, "leaky_relu"), fc(1470)]
    return tuple(layers)


def _ms6() -> tuple[LayerSpec, ...]:
    layers = []
    acts = ("relu", "relu", "relu", "silu", "silu", "silu")
    for i, (width, act) in enumerate(zip((32, 64, 128, 256, 512, 1024), acts)):
        layers.append(conv(width, 5, activation=act))
        if i < 5:
            layers.append(maxpool())
    layers += [LayerSpec("adaptive_avg_pool", out_h=7, out_w=7), FLATTEN,
               fc(1920, "silu"), LayerSpec("dropout", rate=0.25), fc(1470)]
    return tuple(layers)


_BUILTINS = {"full24": _full24, "tiny9": _tiny9, "ms6": _ms6}


def builtin_architecture(name: str) -> ArchitectureDef:
    try:
        layers = _BUILTINS[name]()
    except KeyError:
        raise UnknownArchitecture(name) from None
    return ArchitectureDef(name, layers)


def builtin_names() -> list[str]:
    return sorted(_BUILTINS)


# --------------------------------------------------------------------------
# shapes and parameters
# --------------------------------------------------------------------------

def _walk(arch: ArchitectureDef, input_h: int, input_w: int, fc_inputs=None):
    """Yield ``(layer, in_shape, out_shape)``; shapes are (c, h, w) or (n,)."""
    shape: tuple[int, ...] = (arch.input_c, input_h, input_w)
    fc_idx = 0
    for layer in arch.layers:
        in_shape = shape
        if layer.kind in ("conv", "maxpool", "adaptive_avg_pool") and len(shape) != 3:
            raise ShapeMismatch(f"{layer.kind} needs a spatial input, got {shape}")
        if layer.kind == "conv":
            c, h, w = shape
            oh = (h + 2 * layer.padding - layer.kernel) // layer.stride + 1
            ow = (w + 2 * layer.padding - layer.kernel) // layer.stride + 1
            shape = (layer.out_channels, oh, ow)
        elif layer.kind == "maxpool":
            c, h, w = shape
            shape = (c, (h - layer.kernel) // layer.stride + 1, (w - layer.kernel) // layer.stride + 1)
        elif layer.kind == "adaptive_avg_pool":
            shape = (shape[0], layer.out_h, layer.out_w)
        elif layer.kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif layer.kind == "fully_connected":
            if len(shape) != 1:
                raise ShapeMismatch(f"fully connected layer needs a flat input, got {shape}")
            if fc_inputs is not None and shape[0] != fc_inputs[fc_idx]:
                raise ShapeMismatch(
                    f"fully connected layer {fc_idx} expects {fc_inputs[fc_idx]} inputs, got {shape[0]}"
                )
            fc_idx += 1
            shape = (layer.out_features,)
        if any(d <= 0 for d in shape):
            raise ShapeUnderflow(f"{layer.kind} maps {in_shape} to {shape}")
        yield layer, in_shape, shape


def _fc_inputs(arch: ArchitectureDef) -> list[int]:
    return [i[0] for l, i, _ in _walk(arch, arch.input_h, arch.input_w) if l.kind == "fully_connected"]


def shape_inference(arch: ArchitectureDef, input_h: int | None = None, input_w: int | None = None) -> list[tuple[int, ...]]:
    """Output shape of every layer for an input of the given size.

    Fully connected widths are fixed by the architecture's declared input,
    so other sizes are accepted only when they flatten to the same length.
    """
    h = arch.input_h if input_h is None else input_h
    w = arch.input_w if input_w is None else input_w
    shapes = [out for _, _, out in _walk(arch, h, w, _fc_inputs(arch))]
    final = shapes[-1] if shapes else (arch.input_c, h, w)
    if final != (arch.grid.size,):
        raise ShapeMismatch(f"{arch.name} ends in {final}, grid needs ({arch.grid.size},)")
    return shapes


def param_shapes(arch: ArchitectureDef) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """``(weight_shape, bias_shape)`` of each parameterized layer."""
    out = []
    for layer, in_shape, _ in _walk(arch, arch.input_h, arch.input_w):
        if layer.kind == "conv":
            out.append(((layer.out_channels, in_shape[0], layer.kernel, layer.kernel), (layer.out_channels,)))
        elif layer.kind == "fully_connected":
            out.append(((layer.out_features, in_shape[0]), (layer.out_features,)))
    return out


def param_count(arch: ArchitectureDef) -> tuple[int, list[int]]:
    """Total and per-layer parameter counts (zero for parameter-free layers)."""
    per_layer = []
    for layer, in_shape, _ in _walk(arch, arch.input_h, arch.input_w):
        if layer.kind == "conv":
            per_layer.append((layer.kernel * layer.kernel * in_shape[0] + 1) * layer.out_channels)
        elif layer.kind == "fully_connected":
            per_layer.append((in_shape[0] + 1) * layer.out_features)
        else:
            per_layer.append(0)
    return sum(per_layer), per_layer


# --------------------------------------------------------------------------
# weights
# --------------------------------------------------------------------------

class WeightStore:
    """Per-layer ``(weight, bias)`` float32 arrays checked against an architecture."""

    def __init__(self, arch: ArchitectureDef, params: Sequence[tuple[np.ndarray, np.ndarray]]):
        expected = param_shapes(arch)
        if len(params) != len(expected):
            raise WeightMismatch(f"{arch.name} has {len(expected)} parameterized layers, got {len(params)}")
        checked = []
        for i, ((w, b), (ws, bs)) in enumerate(zip(params, expected)):
            w, b = np.asarray(w, dtype=np.float32), np.asarray(b, dtype=np.float32)
            if w.shape != ws or b.shape != bs:
                raise WeightMismatch(f"layer {i}: got {w.shape}/{b.shape}, expected {ws}/{bs}")
            checked.append((w, b))
        self.arch = arch
        self.params = checked

    def __len__(self):
        return len(self.params)

    def __iter__(self):
        return iter(self.params)

    def __getitem__(self, i):
        return self.params[i]


def random_weights(arch: ArchitectureDef, seed: int = 0, scale: float = 1.0) -> WeightStore:
    """He-normal weights and zero biases, useful for smoke tests and benchmarks."""
    rng = np.random.default_rng(seed)
    params = []
    for ws, bs in param_shapes(arch):
        fan_in = int(np.prod(ws[1:]))
        w = rng.standard_normal(ws, dtype=np.float32)
        w *= np.float32(scale * np.sqrt(2.0 / fan_in))
        params.append((w, np.zeros(bs, dtype=np.float32)))
    return WeightStore(arch, params)


def zero_weights(arch: ArchitectureDef) -> WeightStore:
    return WeightStore(arch, [(np.zeros(ws, np.float32), np.zeros(bs, np.float32)) for ws, bs in param_shapes(arch)])


def _write_array(fp: BinaryIO, a: np.ndarray) -> None:
    fp.write(struct.pack("<I", a.ndim))
    fp.write(struct.pack(f"<{a.ndim}I", *a.shape))
    fp.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def write_weights(arch: ArchitectureDef, weights: WeightStore, fp: BinaryIO) -> None:
    name = arch.name.encode("utf-8")
    fp.write(MAGIC)
    fp.write(struct.pack("<I", len(name)))
    fp.write(name)
    for w, b in weights:
        _write_array(fp, w)
        _write_array(fp, b)


def save_weights(arch: ArchitectureDef, weights: WeightStore) -> bytes:
    buf = io.BytesIO()
    write_weights(arch, weights, buf)
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.data):
            raise Truncated(f"need {n} bytes at offset {self.pos}, file has {len(self.data)}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_weights(arch: ArchitectureDef, data: bytes) -> WeightStore:
    """Parse a YWT1 blob, validating every dimension against ``arch``."""
    r = _Reader(data)
    if bytes(r.take(4)) != MAGIC:
        raise BadMagic("not a YWT1 weight file")
    name = bytes(r.take(r.u32())).decode("utf-8", errors="replace")
    expected = param_shapes(arch)
    params = []
    for i, shapes in enumerate(expected):
        pair = []
        for part, shape in zip(("weight", "bias"), shapes):
            ndim = r.u32()
            dims = tuple(struct.unpack(f"<{ndim}I", r.take(4 * ndim))) if ndim <= 8 else None
            if dims != shape:
                raise DimensionMismatch(
                    f"layer {i} {part}: file has {dims}, {arch.name} needs {shape} (file architecture {name!r})"
                )
            n = int(np.prod(shape))
            pair.append(np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape).astype(np.float32))
        params.append(tuple(pair))
    if r.pos != len(r.data):
        raise DimensionMismatch(f"{len(r.data) - r.pos} unexpected trailing bytes")
    if name != arch.name:
        raise DimensionMismatch(f"file is for architecture {name!r}, not {arch.name!r}")
    return WeightStore(arch, params)


# --------------------------------------------------------------------------
# forward
# --------------------------------------------------------------------------

def relu(x):
    return np.maximum(x, 0.0)


def leaky_relu(x):
    return np.where(x > 0, x, LEAKY_SLOPE * x)


def silu(x):
    # x * sigmoid(x); exp only ever sees -|x| so nothing overflows
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return x * np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def activate(x: np.ndarray, name: str) -> np.ndarray:
    if name == "relu":
        return relu(x)
    if name == "leaky_relu":
        return leaky_relu(x)
    if name == "silu":
        return silu(x)
    return x


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Direct convolution of an ``(h, w, c_in)`` map.

    Each kernel tap is one ``(positions x c_in) @ (c_in x c_out)`` product
    accumulated into the output, so memory stays at one output map.
    """
    h, w, cin = x.shape
    cout, wcin, k, _ = weight.shape
    if wcin != cin:
        raise WeightMismatch(f"conv weight expects {wcin} input channels, got {cin}")
    oh = (h + 2 * padding - k) // stride + 1
    ow = (w + 2 * padding - k) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ShapeUnderflow(f"conv {k}x{k}/{stride} on {h}x{w}")
    xp = np.pad(x, ((padding, padding), (padding, padding), (0, 0))) if padding else x
    taps = np.ascontiguousarray(np.transpose(weight, (2, 3, 1, 0)), dtype=np.float64)
    out = np.zeros((oh * ow, cout))
    span_h, span_w = stride * (oh - 1) + 1, stride * (ow - 1) + 1
    for ky in range(k):
        for kx in range(k):
            patch = xp[ky:ky + span_h:stride, kx:kx + span_w:stride]
            out += patch.reshape(oh * ow, cin) @ taps[ky, kx]
    out += bias.astype(np.float64)
    return out.reshape(oh, ow, cout)


def max_pool(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    h, w, _ = x.shape
    oh, ow = (h - kernel) // stride + 1, (w - kernel) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ShapeUnderflow(f"maxpool {kernel}/{stride} on {h}x{w}")
    span_h, span_w = stride * (oh - 1) + 1, stride * (ow - 1) + 1
    out = None
    for ky in range(kernel):
        for kx in range(kernel):
            v = x[ky:ky + span_h:stride, kx:kx + span_w:stride]
            out = v.copy() if out is None else np.maximum(out, v)
    return out


def adaptive_avg_pool(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Average over the bins ``[floor(i*n/m), ceil((i+1)*n/m))`` of each axis."""
    h, w, c = x.shape
    out = np.empty((out_h, out_w, c))
    for i in range(out_h):
        y0, y1 = (i * h) // out_h, -((-(i + 1) * h) // out_h)
        for j in range(out_w):
            x0, x1 = (j * w) // out_w, -((-(j + 1) * w) // out_w)
            out[i, j] = x[y0:y1, x0:x1].mean(axis=(0, 1))
    return out


def linear(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, chunk: int = 256) -> np.ndarray:
    """``weight @ x + bias`` in binary64, converting weight rows in chunks."""
    out = np.empty(weight.shape[0])
    for r in range(0, weight.shape[0], chunk):
        out[r:r + chunk] = weight[r:r + chunk].astype(np.float64) @ x
    return out + bias.astype(np.float64)


def forward_array(arch: ArchitectureDef, weights: WeightStore, x: np.ndarray) -> np.ndarray:
    """Run the network on an ``(h, w, c)`` float input; returns the final activations."""
    if weights.arch != arch and param_shapes(arch) != [(w.shape, b.shape) for w, b in weights]:
        raise WeightMismatch(f"weights do not match architecture {arch.name}")
    fc_in = _fc_inputs(arch)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != arch.input_c:
        raise ShapeMismatch(f"input must be (h, w, {arch.input_c}), got {x.shape}")
    p = 0
    n_fc = 0
    for layer in arch.layers:
        if layer.kind == "conv":
            w, b = weights[p]
            p += 1
            x = activate(conv2d(x, w, b, layer.stride, layer.padding), layer.activation)
        elif layer.kind == "maxpool":
            x = max_pool(x, layer.kernel, layer.stride)
        elif layer.kind == "adaptive_avg_pool":
            x = adaptive_avg_pool(x, layer.out_h, layer.out_w)
        elif layer.kind == "flatten":
            x = np.transpose(x, (2, 0, 1)).ravel()
        elif layer.kind == "fully_connected":
            if x.ndim != 1 or x.shape[0] != fc_in[n_fc]:
                raise ShapeMismatch(f"fully connected layer {n_fc} expects {fc_in[n_fc]} inputs, got {x.shape}")
            w, b = weights[p]
            p += 1
            n_fc += 1
            x = activate(linear(x, w, b), layer.activation)
        # dropout is the identity at inference
    return x


def prepare_image(arch: ArchitectureDef, img: np.ndarray) -> np.ndarray:
    """Resize a uint8 image to the network input and scale pixels to [0, 1]."""
    return resize_bilinear(img, arch.input_h, arch.input_w) / 255.0


def forward(arch: ArchitectureDef, weights: WeightStore, img: np.ndarray) -> TargetTensor:
    """Network output for an image already resized to the architecture input.

    ``uint8`` images are scaled to [0, 1]; float images are used as given.
    """
    x = np.asarray(img)
    if x.dtype == np.uint8:
        x = x / 255.0
    if x.shape[:2] != (arch.input_h, arch.input_w) and not any(l.kind == "adaptive_avg_pool" for l in arch.layers):
        raise ShapeMismatch(f"{arch.name} expects {arch.input_h}x{arch.input_w} input, got {x.shape[:2]}")
    out = forward_array(arch, weights, x)
    if out.shape != (arch.grid.size,):
        raise ShapeMismatch(f"network produced {out.shape}, grid needs ({arch.grid.size},)")
    return TargetTensor(arch.grid, out.reshape(arch.grid.shape))
