"""Thirteen image corruptions at three severities.

Seven kinds augment training data; the other six are held out as a
robustness benchmark.  Each algorithm works on float RGB in [0, 1] and
quantizes once at the end.  Stochastic kinds draw only from a Philox stream
keyed by ``(seed, kind index)``, so outputs are reproducible bit-for-bit.

Algorithms (the severity table below holds every numeric knob):

rain_blur           motion blur along a random streak angle plus a brightness lift
snow                thresholded Gaussian flakes, motion-blurred, screen-blended over a
                    washed-out copy of the image
fog                 diamond-square plasma haze added then renormalized
alpha_blend         ghost copy shifted by a random offset, then a gray veil
frosted_glass_blur  Gaussian pre-blur, random local pixel displacement within a radius,
                    box blur
lens_defect         soft dark blobs and thin scratches at random positions
jpeg                Pillow encode/decode round trip
zoom_blur           mean of center-scaled copies
frost               blend with a procedurally generated ice texture (random crop)
contrast            per-channel scaling about the image mean
rain_drop           elliptical drops showing an inverted, blurred view of their surroundings
shot_noise          Poisson counts at rate ``pixel * lam``, divided back by ``lam``
pixelate            block means (edge blocks partial) broadcast back to full size
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Mapping

import numpy as np
from PIL import Image
from scipy import ndimage

from .dataset_io import CLEAN, Provenance, RoiImage
from .imaging import philox, quantize, to_unit


class Severity(enum.IntEnum):
    MILD = 1
    MODERATE = 2
    SEVERE = 3

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, name: str | "Severity") -> "Severity":
        if isinstance(name, Severity):
            return name
        try:
            return cls[str(name).upper()]
        except KeyError:
            raise ValueError(f"unknown severity {name!r}") from None


TRAIN_KINDS = ("rain_blur", "snow", "fog", "alpha_blend", "frosted_glass_blur",
               "lens_defect", "jpeg")
TEST_KINDS = ("zoom_blur", "frost", "contrast", "rain_drop", "shot_noise", "pixelate")
ALL_KINDS = TRAIN_KINDS + TEST_KINDS


class UnknownCorruption(ValueError):
    pass


@dataclass(frozen=True)
class CorruptionKind:
    name: str
    partition: str

    @classmethod
    def get(cls, name: str) -> "CorruptionKind":
        if name in TRAIN_KINDS:
            return cls(name, "train")
        if name in TEST_KINDS:
            return cls(name, "test")
        raise UnknownCorruption(f"unknown corruption kind {name!r}")


def corruption_partition(partition: str) -> tuple[CorruptionKind, ...]:
    if partition == "train":
        return tuple(CorruptionKind(n, "train") for n in TRAIN_KINDS)
    if partition == "test":
        return tuple(CorruptionKind(n, "test") for n in TEST_KINDS)
    raise ValueError(f"partition must be 'train' or 'test', got {partition!r}")


# Frozen per-(kind, severity) parameters; columns are mild, moderate, severe.
# Monotone in damage on the reference set (see tests/test_corruption.py).
_TABLE: dict[str, dict[str, tuple[float, float, float]]] = {
    "rain_blur": {"length": (0.06, 0.12, 0.20), "lift": (0.03, 0.06, 0.10)},
    "snow": {"loc": (0.10, 0.20, 0.30), "scale": (0.30, 0.30, 0.30),
             "threshold": (0.80, 0.72, 0.62), "length": (0.08, 0.12, 0.18),
             "wash": (0.80, 0.70, 0.60)},
    "fog": {"strength": (0.6, 1.0, 1.6), "decay": (2.2, 2.0, 1.8)},
    "alpha_blend": {"alpha": (0.15, 0.30, 0.45), "ghost": (0.30, 0.40, 0.50),
                    "shift": (0.03, 0.05, 0.08)},
    "frosted_glass_blur": {"sigma": (0.5, 0.7, 0.9), "radius": (1, 2, 3),
                           "iterations": (1, 2, 3), "box": (3, 3, 5)},
    "lens_defect": {"blobs": (2, 4, 7), "radius": (0.06, 0.09, 0.12),
                    "opacity": (0.50, 0.65, 0.80), "scratches": (1, 2, 3)},
    "jpeg": {"quality": (25, 15, 7)},
    "zoom_blur": {"max_zoom": (1.11, 1.21, 1.33), "step": (0.02, 0.02, 0.03)},
    "frost": {"image_weight": (0.90, 0.80, 0.70), "frost_weight": (0.38, 0.55, 0.72)},
    "contrast": {"factor": (0.5, 0.3, 0.15)},
    "rain_drop": {"drops": (4, 8, 14), "radius": (0.06, 0.08, 0.10),
                  "sigma": (1.0, 1.5, 2.0), "magnify": (0.6, 0.5, 0.4)},
    "shot_noise": {"lam": (60.0, 25.0, 12.0)},
    "pixelate": {"block_size": (4, 8, 16)},
}


def severity_params(kind: str | CorruptionKind, level: str | Severity) -> dict[str, float]:
    name = kind.name if isinstance(kind, CorruptionKind) else kind
    if name not in _TABLE:
        raise UnknownCorruption(f"unknown corruption kind {name!r}")
    idx = int(Severity.parse(level)) - 1
    return {k: v[idx] for k, v in _TABLE[name].items()}


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: Severity
    seed: int = 0
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        CorruptionKind.get(self.kind)
        object.__setattr__(self, "severity", Severity.parse(self.severity))
        resolved = severity_params(self.kind, self.severity)
        resolved.update(self.params)
        object.__setattr__(self, "params", resolved)


# --------------------------------------------------------------------------
# kernels and helpers

def _line_kernel(length: int, angle: float) -> np.ndarray:
    """Anti-aliased line of ``length`` pixels through the kernel center."""
    length = max(1, int(length))
    size = length if length % 2 else length + 1
    k = np.zeros((size, size))
    c = size // 2
    ts = np.linspace(-(length - 1) / 2, (length - 1) / 2, 4 * length)
    ys = c + ts * np.sin(angle)
    xs = c + ts * np.cos(angle)
    y0, x0 = np.floor(ys).astype(int), np.floor(xs).astype(int)
    fy, fx = ys - y0, xs - x0
    for dy, dx, wgt in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx),
                        (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
        yy, xx = np.clip(y0 + dy, 0, size - 1), np.clip(x0 + dx, 0, size - 1)
        np.add.at(k, (yy, xx), wgt)
    return k / k.sum()


def _filter_channels(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    for ch in range(x.shape[2]):
        out[..., ch] = ndimage.correlate(x[..., ch], kernel, mode="nearest")
    return out


def _blur(x: np.ndarray, sigma: float) -> np.ndarray:
    return ndimage.gaussian_filter(x, sigma=(sigma, sigma, 0), mode="nearest")


def _extent(x: np.ndarray) -> int:
    return min(x.shape[0], x.shape[1])


def plasma_fractal(size: int, decay: float, rng: np.random.Generator) -> np.ndarray:
    """Diamond-square height map on a ``size`` x ``size`` torus (size a power of 2), in [0, 1]."""
    m = np.zeros((size, size))
    step = size
    scale = 1.0
    while step >= 2:
        half = step // 2
        # squares: centers get the corner mean plus noise
        corners = m[0:size:step, 0:size:step]
        mean = (corners + np.roll(corners, -1, 0) + np.roll(corners, -1, 1)
                + np.roll(np.roll(corners, -1, 0), -1, 1)) / 4.0
        m[half:size:step, half:size:step] = mean + rng.uniform(-scale, scale, mean.shape)
        # diamonds: edge midpoints from their four neighbours
        centers = m[half:size:step, half:size:step]
        ltd = m[0:size:step, 0:size:step]
        above = (ltd + np.roll(ltd, -1, 1) + centers + np.roll(centers, 1, 0)) / 4.0
        m[0:size:step, half:size:step] = above + rng.uniform(-scale, scale, above.shape)
        left = (ltd + np.roll(ltd, -1, 0) + centers + np.roll(centers, 1, 1)) / 4.0
        m[half:size:step, 0:size:step] = left + rng.uniform(-scale, scale, left.shape)
        step = half
        scale /= decay
    m -= m.min()
    peak = m.max()
    return m / peak if peak > 0 else m


def _shift(x: np.ndarray, dy: int, dx: int) -> np.ndarray:
    h, w = x.shape[:2]
    ys = np.clip(np.arange(h) - dy, 0, h - 1)
    xs = np.clip(np.arange(w) - dx, 0, w - 1)
    return x[ys][:, xs]


@lru_cache(maxsize=None)
def frost_textures(count: int = 3, size: int = 128) -> tuple[np.ndarray, ...]:
    """Ice-crystal textures, generated once from a fixed key and treated as read-only."""
    textures = []
    for t in range(count):
        rng = philox(0xF057, t)
        tex = 0.35 * plasma_fractal(size, 1.6, rng)
        yy, xx = np.mgrid[0:size, 0:size]
        for _ in range(60 + 20 * t):
            cy, cx = rng.uniform(0, size, 2)
            ang = rng.uniform(0, np.pi)
            length = rng.uniform(6, 30)
            # distance of every pixel to the crystal segment
            dy, dx = yy - cy, xx - cx
            along = np.clip(dy * np.sin(ang) + dx * np.cos(ang), -length / 2, length / 2)
            py, px = cy + along * np.sin(ang), cx + along * np.cos(ang)
            dist = np.hypot(yy - py, xx - px)
            tex += 0.5 * np.exp(-(dist / 0.9) ** 2)
        tex = ndimage.gaussian_filter(tex, 0.7, mode="wrap")
        tex = np.clip(tex / np.percentile(tex, 99.5), 0.0, 1.0)
        tex = np.stack([tex * 0.85, tex * 0.93, tex], axis=-1)
        tex.setflags(write=False)
        textures.append(tex)
    return tuple(textures)


# --------------------------------------------------------------------------
# corruptions; signature (x in [0,1] float HxWx3, params, rng) -> float HxWx3

def _rain_blur(x, p, rng):
    angle = rng.uniform(np.pi / 3, 2 * np.pi / 3)  # near-vertical streaks
    length = max(2, int(round(p["length"] * _extent(x))))
    return _filter_channels(x, _line_kernel(length, angle)) + p["lift"]


def _snow(x, p, rng):
    h, w = x.shape[:2]
    flakes = rng.normal(p["loc"], p["scale"], (h, w))
    flakes[flakes < p["threshold"]] = 0.0
    angle = rng.uniform(np.pi / 4, 3 * np.pi / 4)
    length = max(2, int(round(p["length"] * _extent(x))))
    flakes = ndimage.correlate(flakes, _line_kernel(length, angle), mode="nearest")
    gray = x @ np.array([0.299, 0.587, 0.114])
    washed = p["wash"] * x + (1 - p["wash"]) * np.maximum(x, gray[..., None] * 1.5 + 0.5)
    layer = np.clip(flakes, 0.0, 1.0)[..., None]
    return 1.0 - (1.0 - washed) * (1.0 - layer)


def _fog(x, p, rng):
    h, w = x.shape[:2]
    size = 1 << int(np.ceil(np.log2(max(h, w, 2))))
    haze = plasma_fractal(size, p["decay"], rng)[:h, :w, None]
    peak = x.max()
    return (x + p["strength"] * haze) * peak / (peak + p["strength"])


def _alpha_blend(x, p, rng):
    dist = p["shift"] * _extent(x)
    ang = rng.uniform(0, 2 * np.pi)
    ghost = _shift(x, int(round(dist * np.sin(ang))), int(round(dist * np.cos(ang))))
    mixed = (1 - p["ghost"]) * x + p["ghost"] * ghost
    return (1 - p["alpha"]) * mixed + p["alpha"] * 0.5


def _frosted_glass_blur(x, p, rng):
    h, w = x.shape[:2]
    out = _blur(x, p["sigma"])
    r = int(p["radius"])
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(int(p["iterations"])):
        dy = rng.integers(-r, r + 1, (h, w))
        dx = rng.integers(-r, r + 1, (h, w))
        out = out[np.clip(yy + dy, 0, h - 1), np.clip(xx + dx, 0, w - 1)]
    k = int(p["box"])
    return ndimage.uniform_filter(out, size=(k, k, 1), mode="nearest")


def _lens_defect(x, p, rng):
    h, w = x.shape[:2]
    ext = _extent(x)
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    shade = np.zeros((h, w))
    for _ in range(int(p["blobs"])):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        rad = p["radius"] * ext * rng.uniform(0.7, 1.3)
        shade = np.maximum(shade, np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / rad ** 2) ** 2))
    for _ in range(int(p["scratches"])):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ang = rng.uniform(0, np.pi)
        half = rng.uniform(0.2, 0.5) * ext
        along = np.clip((yy - cy) * np.sin(ang) + (xx - cx) * np.cos(ang), -half, half)
        dist = np.hypot(yy - cy - along * np.sin(ang), xx - cx - along * np.cos(ang))
        shade = np.maximum(shade, np.exp(-(dist / 0.8) ** 2))
    return x * (1.0 - p["opacity"] * shade)[..., None]


def _jpeg(x, p, rng):
    buf = io.BytesIO()
    Image.fromarray(quantize(x)).save(buf, format="JPEG", quality=int(p["quality"]))
    buf.seek(0)
    with Image.open(buf) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def _zoom_blur(x, p, rng):
    h, w = x.shape[:2]
    zooms = np.arange(1.0, p["max_zoom"], p["step"])
    acc = np.zeros_like(x)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    for z in zooms:
        if z == 1.0:
            acc += x
            continue
        coords = [cy + (yy - cy) / z, cx + (xx - cx) / z]
        for ch in range(3):
            acc[..., ch] += ndimage.map_coordinates(x[..., ch], coords, order=1, mode="nearest")
    return acc / len(zooms)


def _frost(x, p, rng):
    h, w = x.shape[:2]
    tex = frost_textures()[int(rng.integers(0, len(frost_textures())))]
    reps = (int(np.ceil(h / tex.shape[0])) + 1, int(np.ceil(w / tex.shape[1])) + 1, 1)
    tiled = np.tile(tex, reps)
    oy = int(rng.integers(0, tex.shape[0]))
    ox = int(rng.integers(0, tex.shape[1]))
    return p["image_weight"] * x + p["frost_weight"] * tiled[oy:oy + h, ox:ox + w]


def _contrast(x, p, rng):
    mean = x.mean(axis=(0, 1), keepdims=True)
    return (x - mean) * p["factor"] + mean


def _rain_drop(x, p, rng):
    h, w = x.shape[:2]
    ext = _extent(x)
    blurred = _blur(x, p["sigma"])
    out = x.copy()
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    for _ in range(int(p["drops"])):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ry = p["radius"] * ext * rng.uniform(0.8, 1.4)
        rx = ry * rng.uniform(0.6, 1.0)
        rho = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
        inside = rho <= 1.0
        if not inside.any():
            continue
        # a drop acts as a small inverting lens
        sy = np.clip(cy - (yy[inside] - cy) * p["magnify"] - 0.5, 0, h - 1)
        sx = np.clip(cx - (xx[inside] - cx) * p["magnify"] - 0.5, 0, w - 1)
        view = np.stack([ndimage.map_coordinates(blurred[..., ch], [sy, sx], order=1,
                                                 mode="nearest") for ch in range(3)], axis=-1)
        rim = 1.0 - 0.35 * rho[inside] ** 4
        out[inside] = view * rim[:, None] + 0.04
    return out


def _shot_noise(x, p, rng):
    lam = p["lam"]
    return rng.poisson(x * lam) / lam


def _pixelate(x, p, rng):
    b = max(1, int(p["block_size"]))
    if b == 1:
        return x
    h, w = x.shape[:2]
    ys = np.arange(0, h, b)
    xs = np.arange(0, w, b)
    sums = np.add.reduceat(np.add.reduceat(x, ys, axis=0), xs, axis=1)
    counts = (np.diff(np.append(ys, h))[:, None] * np.diff(np.append(xs, w))[None, :])[..., None]
    means = sums / counts
    return np.repeat(np.repeat(means, b, axis=0), b, axis=1)[:h, :w]


_ALGORITHMS: dict[str, Callable] = {
    "rain_blur": _rain_blur,
    "snow": _snow,
    "fog": _fog,
    "alpha_blend": _alpha_blend,
    "frosted_glass_blur": _frosted_glass_blur,
    "lens_defect": _lens_defect,
    "jpeg": _jpeg,
    "zoom_blur": _zoom_blur,
    "frost": _frost,
    "contrast": _contrast,
    "rain_drop": _rain_drop,
    "shot_noise": _shot_noise,
    "pixelate": _pixelate,
}


def apply_corruption(image: np.ndarray, spec: CorruptionSpec,
                     provenance: Provenance = CLEAN) -> RoiImage:
    if image.ndim != 3 or image.shape[2] != 3 or image.size == 0:
        raise ValueError(f"expected a nonempty RGB raster, got shape {image.shape}")
    rng = philox(spec.seed, ALL_KINDS.index(spec.kind))
    out = quantize(_ALGORITHMS[spec.kind](to_unit(image), spec.params, rng))
    prov = Provenance(night=provenance.night,
                      corruption=(spec.kind, spec.severity.label, int(spec.seed)))
    return RoiImage(out, prov)


def provenance_filename(stem: str, spec: CorruptionSpec) -> str:
    return f"{stem}__{spec.kind}__{spec.severity.label}__{spec.seed}.png"


def resolve_kinds(text: str) -> tuple[str, ...]:
    """``train``, ``test``, ``all`` or a comma-separated list of kind names."""
    text = text.strip()
    if text in ("train", "test"):
        return tuple(k.name for k in corruption_partition(text))
    if text == "all":
        return ALL_KINDS
    kinds = tuple(k.strip() for k in text.split(",") if k.strip())
    for k in kinds:
        CorruptionKind.get(k)
    return kinds


def resolve_severities(text: str) -> tuple[Severity, ...]:
    text = text.strip()
    if text == "all":
        return tuple(Severity)
    return tuple(Severity.parse(s.strip()) for s in text.split(",") if s.strip())
