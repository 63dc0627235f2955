"""Forward-only VGG-16-shaped feature extractor with FC-1 / FC-2 taps.

Weights are either drawn from a seeded He-normal scheme or loaded from a
``TLWT`` file.  Layer arithmetic runs through ``torch`` on the CPU; the
layer helpers accept float32 or float64 arrays and preserve the dtype so the
same code can be checked against brute-force loops at double precision.

Activation layout is channel-first ``(C, H, W)``; the flatten feeding FC-1
follows that order (512 x 7 x 7).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable

import numpy as np
import torch
import torch.nn.functional as F

from .imaging import philox, resize_bilinear

INPUT_SIZE = 224
FEATURE_DIM = 4096
TAPS = ("fc1", "fc2")
WEIGHT_MAGIC = b"TLWT"
WEIGHT_VERSION = 1


class WeightFileError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkSpec:
    blocks: tuple[tuple[int, int], ...] = ((2, 64), (2, 128), (3, 256), (3, 512), (3, 512))
    fc: tuple[int, ...] = (4096, 4096, 1000)
    input_size: int = INPUT_SIZE
    in_channels: int = 3

    def layer_shapes(self) -> list[tuple[str, tuple[int, ...], tuple[int, ...]]]:
        """``(name, weight shape, bias shape)`` in execution order."""
        shapes = []
        cin = self.in_channels
        for b, (count, filters) in enumerate(self.blocks, start=1):
            for i in range(1, count + 1):
                shapes.append((f"conv{b}_{i}", (filters, cin, 3, 3), (filters,)))
                cin = filters
        side = self.input_size >> len(self.blocks)
        fan_in = cin * side * side
        for j, width in enumerate(self.fc, start=1):
            shapes.append((f"fc{j}", (width, fan_in), (width,)))
            fan_in = width
        return shapes

    def activation_shape(self, block: int) -> tuple[int, int, int]:
        """``(C, H, W)`` after block ``block`` (1-based), pooling included."""
        side = self.input_size >> block
        return self.blocks[block - 1][1], side, side


VGG16 = NetworkSpec()


@dataclass
class NetworkWeights:
    layers: dict[str, tuple[np.ndarray, np.ndarray]]
    provenance: str = "seeded-random"
    _torch: dict = field(default_factory=dict, repr=False, compare=False)

    def tensors(self, name: str) -> tuple[torch.Tensor, torch.Tensor]:
        if name not in self._torch:
            w, b = self.layers[name]
            wt = torch.from_numpy(w)
            if wt.ndim == 4:
                # NHWC kernels run markedly faster on CPU
                wt = wt.contiguous(memory_format=torch.channels_last)
            self._torch[name] = (wt, torch.from_numpy(b))
        return self._torch[name]

    def winograd(self, name: str) -> torch.Tensor:
        key = f"{name}@winograd"
        if key not in self._torch:
            self._torch[key] = torch.from_numpy(winograd_kernel(self.layers[name][0]))
        return self._torch[key]

    def validate(self, spec: NetworkSpec) -> None:
        expected = spec.layer_shapes()
        if [n for n, _, _ in expected] != list(self.layers):
            raise WeightFileError("layer names do not match the network plan")
        for name, wshape, bshape in expected:
            w, b = self.layers[name]
            if w.shape != wshape or b.shape != bshape:
                raise WeightFileError(f"{name}: shape {w.shape}/{b.shape}, expected {wshape}/{bshape}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise WeightFileError(f"{name}: non-finite values")


def build_network(seed: int = 0, spec: NetworkSpec = VGG16,
                  dtype=np.float32) -> tuple[NetworkSpec, NetworkWeights]:
    """He-normal weights (std ``sqrt(2 / fan_in)``), zero biases; layer ``i`` draws
    from the Philox stream keyed ``(seed, i)``."""
    layers = {}
    for i, (name, wshape, bshape) in enumerate(spec.layer_shapes()):
        fan_in = int(np.prod(wshape[1:]))
        rng = philox(seed, i)
        w = rng.standard_normal(wshape, dtype=np.float32)
        w *= np.float32(np.sqrt(2.0 / fan_in))
        layers[name] = (w.astype(dtype, copy=False), np.zeros(bshape, dtype=dtype))
    return spec, NetworkWeights(layers, provenance=f"seeded-random:{seed}")


@lru_cache(maxsize=2)
def cached_network(seed: int) -> tuple[NetworkSpec, NetworkWeights]:
    return build_network(seed)


# --------------------------------------------------------------------------
# layers

def _as_tensor(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.from_numpy(np.ascontiguousarray(x))


def conv3x3_relu(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Zero-padded 3x3 stride-1 convolution plus ReLU on a ``(C, H, W)`` array."""
    with torch.inference_mode():
        y = F.relu(F.conv2d(_as_tensor(x)[None], _as_tensor(w), _as_tensor(b), padding=1))
    return y[0].numpy()


def max_pool2x2(x: np.ndarray) -> np.ndarray:
    with torch.inference_mode():
        return F.max_pool2d(_as_tensor(x)[None], 2, 2)[0].numpy()


def dense_relu(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    with torch.inference_mode():
        return F.relu(F.linear(_as_tensor(x), _as_tensor(w), _as_tensor(b))).numpy()


FC_BLOCK = 8  # FC rows are always multiplied in zero-padded blocks of this many
WINOGRAD_BLOCKS = (3, 4)  # where F(4x4, 3x3) beats direct convolution on CPU

# Winograd F(4, 3) transforms, interpolation points 0, +-1, +-2, infinity
_WG_BT = np.array([[4, 0, -5, 0, 1, 0], [0, -4, -4, 1, 1, 0], [0, 4, -4, -1, 1, 0],
                   [0, -2, -1, 2, 1, 0], [0, 2, -1, -2, 1, 0], [0, 4, 0, -5, 0, 1]], dtype=np.float64)
_WG_G = np.array([[1 / 4, 0, 0], [-1 / 6, -1 / 6, -1 / 6], [-1 / 6, 1 / 6, -1 / 6],
                  [1 / 24, 1 / 12, 1 / 6], [1 / 24, -1 / 12, 1 / 6], [0, 0, 1]], dtype=np.float64)
_WG_AT = np.array([[1, 1, 1, 1, 1, 0], [0, 1, -1, 2, -2, 0], [0, 1, 1, 4, 4, 0],
                   [0, 1, -1, 8, -8, 1]], dtype=np.float64)


def winograd_kernel(w: np.ndarray) -> np.ndarray:
    """``(K, C, 3, 3)`` kernel -> ``(36, C, K)`` transformed kernel, computed in float64."""
    u = np.einsum("ij,kcjl,ml->imck", _WG_G, np.asarray(w, dtype=np.float64), _WG_G)
    return np.ascontiguousarray(u.reshape(36, w.shape[1], w.shape[0]).astype(w.dtype))


def winograd_conv3x3_relu(x: torch.Tensor, u: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Zero-padded 3x3 convolution plus ReLU of one ``(H, W, C)`` map via 4x4 output tiles."""
    h, w, c = x.shape
    k = u.shape[2]
    th, tw = -(-h // 4), -(-w // 4)
    kb = torch.from_numpy(np.kron(_WG_BT, _WG_BT).astype(u.numpy().dtype))
    ka = torch.from_numpy(np.kron(_WG_AT, _WG_AT).astype(u.numpy().dtype))
    xp = F.pad(x, (0, 0, 1, 4 * tw + 1 - w, 1, 4 * th + 1 - h))
    tiles = xp.unfold(0, 6, 4).unfold(1, 6, 4).permute(3, 4, 0, 1, 2).reshape(36, -1)
    m = torch.bmm((kb @ tiles).reshape(36, -1, c), u)
    y = (ka @ m.reshape(36, -1)).reshape(4, 4, th, tw, k).permute(2, 0, 3, 1, 4)
    return F.relu(y.reshape(4 * th, 4 * tw, k)[:h, :w] + b)


def _conv_stack(spec: NetworkSpec, weights: NetworkWeights, x: torch.Tensor,
                keep_blocks: bool = False):
    """One image ``(1, C, H, W)``, channels-last in memory."""
    blocks = []
    for b, (count, _) in enumerate(spec.blocks, start=1):
        for i in range(1, count + 1):
            name = f"conv{b}_{i}"
            if b in WINOGRAD_BLOCKS:
                # channels-last (1, C, H, W) is a contiguous (H, W, C) underneath
                y = winograd_conv3x3_relu(x[0].permute(1, 2, 0), weights.winograd(name),
                                          weights.tensors(name)[1])
                x = y.permute(2, 0, 1)[None]
            else:
                w, bias = weights.tensors(name)
                x = F.relu(F.conv2d(x, w, bias, padding=1))
        x = F.max_pool2d(x, 2, 2)
        if keep_blocks:
            blocks.append(x)
    return torch.flatten(x.contiguous(), 1), blocks


def _fc_head(weights: NetworkWeights, flat: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    # A fixed GEMM shape keeps each row's result independent of its neighbours;
    # a lone row would otherwise take the matrix-vector path and round differently.
    n = flat.shape[0]
    pad = (-n) % FC_BLOCK
    if pad:
        flat = torch.cat([flat, flat.new_zeros((pad, flat.shape[1]))])
    w1, b1 = weights.tensors("fc1")
    w2, b2 = weights.tensors("fc2")
    out1, out2 = [], []
    for start in range(0, flat.shape[0], FC_BLOCK):
        fc1 = F.relu(F.linear(flat[start:start + FC_BLOCK], w1, b1))
        out1.append(fc1)
        out2.append(F.relu(F.linear(fc1, w2, b2)))
    return torch.cat(out1)[:n], torch.cat(out2)[:n]


def forward_batch(spec: NetworkSpec, weights: NetworkWeights, images: np.ndarray,
                  batch_size: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Both taps for an ``(N, 224, 224, 3)`` batch in [0, 1]; FC-3 and softmax are skipped.

    Convolutions run one image at a time and the FC head in fixed-size blocks,
    so an image's features are bit-identical whatever batch it arrives in.
    ``batch_size`` only bounds how many flattened activations are held at once.
    """
    images = np.asarray(images)
    side = spec.input_size
    if images.ndim != 4 or images.shape[1:] != (side, side, spec.in_channels):
        raise ValueError(f"expected (N, {side}, {side}, {spec.in_channels}), got {images.shape}")
    if not np.isfinite(images).all():
        raise ValueError("non-finite input")
    dtype = weights.layers["fc1"][0].dtype
    out1 = np.empty((len(images), spec.fc[0]), dtype=dtype)
    out2 = np.empty((len(images), spec.fc[1]), dtype=dtype)
    step = max(FC_BLOCK, batch_size - batch_size % FC_BLOCK)
    with torch.inference_mode():
        for start in range(0, len(images), step):
            flats = []
            for img in images[start:start + step]:
                x = torch.from_numpy(np.ascontiguousarray(img.astype(dtype).transpose(2, 0, 1)[None]))
                flats.append(_conv_stack(spec, weights, x.contiguous(
                    memory_format=torch.channels_last))[0])
            fc1, fc2 = _fc_head(weights, torch.cat(flats))
            out1[start:start + len(flats)] = fc1.numpy()
            out2[start:start + len(flats)] = fc2.numpy()
    return out1, out2


def forward(spec: NetworkSpec, weights: NetworkWeights,
            image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    fc1, fc2 = forward_batch(spec, weights, np.asarray(image)[None])
    return fc1[0], fc2[0]


def block_activations(spec: NetworkSpec, weights: NetworkWeights,
                      image: np.ndarray) -> list[np.ndarray]:
    """Pooled output of every block for one image (shape checks, debugging)."""
    dtype = weights.layers["fc1"][0].dtype
    x = torch.from_numpy(np.ascontiguousarray(
        np.asarray(image, dtype=dtype).transpose(2, 0, 1)[None]))
    with torch.inference_mode():
        _, blocks = _conv_stack(spec, weights, x, keep_blocks=True)
    return [b[0].numpy() for b in blocks]


def resize_to_input(image: np.ndarray, size: int = INPUT_SIZE) -> np.ndarray:
    """Bilinear resample of an 8-bit RGB raster to ``size`` x ``size``, scaled to [0, 1]."""
    if image.size == 0:
        raise ValueError("empty image")
    return resize_bilinear(image, size, size) / 255.0


# --------------------------------------------------------------------------
# weight files

def save_weights(path: str | Path, weights: NetworkWeights) -> None:
    entries = []
    for name, (w, b) in weights.layers.items():
        entries.append((f"{name}.weight", w))
        entries.append((f"{name}.bias", b))
    with open(path, "wb") as fh:
        fh.write(WEIGHT_MAGIC + struct.pack("<HH", WEIGHT_VERSION, len(entries)))
        for name, arr in entries:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(struct.pack("<H", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise WeightFileError("truncated weight file")
    return data


def load_weights(path: str | Path, spec: NetworkSpec = VGG16) -> NetworkWeights:
    arrays: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != WEIGHT_MAGIC:
            raise WeightFileError(f"{path}: not a TLWT weight file")
        version, count = struct.unpack("<HH", _read_exact(fh, 4))
        if version != WEIGHT_VERSION:
            raise WeightFileError(f"{path}: unsupported version {version}")
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read_exact(fh, 2))
            name = _read_exact(fh, nlen).decode("utf-8")
            (rank,) = struct.unpack("<H", _read_exact(fh, 2))
            dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
            n = int(np.prod(dims)) if dims else 1
            arrays[name] = np.frombuffer(_read_exact(fh, 4 * n), dtype="<f4").astype(
                np.float32).reshape(dims)
        if fh.read(1):
            raise WeightFileError(f"{path}: trailing bytes after last layer")
    layers = {}
    for name, _, _ in spec.layer_shapes():
        try:
            layers[name] = (arrays.pop(f"{name}.weight"), arrays.pop(f"{name}.bias"))
        except KeyError:
            raise WeightFileError(f"{path}: missing layer {name}") from None
    if arrays:
        raise WeightFileError(f"{path}: unexpected layers {sorted(arrays)}")
    weights = NetworkWeights(layers, provenance=f"loaded-file:{Path(path).name}")
    weights.validate(spec)
    return weights


def resolve_weights(source: str) -> tuple[NetworkSpec, NetworkWeights]:
    """``random:SEED`` or a TLWT path."""
    if source.startswith("random:"):
        return cached_network(int(source.split(":", 1)[1]))
    return VGG16, load_weights(source)


def configure_threads() -> None:
    threads = os.environ.get("TAILLIGHT_THREADS")
    if threads:
        torch.set_num_threads(max(1, int(threads)))


def extract_features(images: Iterable[np.ndarray], weights_source: str = "random:0",
                     tap: str = "fc1", batch_size: int = 8) -> np.ndarray:
    """Resize each 8-bit ROI to the network input and return the requested tap, float64."""
    if tap not in TAPS:
        raise ValueError(f"tap must be one of {TAPS}")
    spec, weights = resolve_weights(weights_source)
    rows = []
    buf = []

    def flush():
        fc1, fc2 = forward_batch(spec, weights, np.stack(buf), batch_size)
        rows.append((fc1 if tap == "fc1" else fc2).astype(np.float64))
        buf.clear()

    for img in images:
        buf.append(resize_to_input(img).astype(np.float32))
        if len(buf) == batch_size:
            flush()
    if buf:
        flush()
    if not rows:
        return np.zeros((0, FEATURE_DIM))
    return np.concatenate(rows)
