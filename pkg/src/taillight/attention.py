"""Rarity-based conspicuity pre-processing and the weighted ROI mask.

Two attention mechanisms live here:

* a conspicuity map: low-level feature maps are turned into per-pixel
  self-information (rarity) maps, fused, and blended back into the raw frame;
* a tiered weight mask multiplied into cropped ROIs, emphasising the corner
  taillights and the brake-light band.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .imaging import luminance, quantize255, resize_bilinear

DEFAULT_BINS = 16
OMEGA = 0.12
OMEGA_PRIME = 0.14
W_HIGH = 1.0

TIER_REST, TIER_TRANSITION, TIER_HIGH = 0, 1, 2


@dataclass(frozen=True)
class FeatureMapStack:
    maps: np.ndarray  # (count, H, W)
    level: int = 1

    def __post_init__(self):
        if self.maps.ndim != 3 or self.maps.shape[0] == 0:
            raise ValueError("a feature stack needs at least one 2-D map")


# --------------------------------------------------------------------------
# rarity and conspicuity

def self_information(feature_map: np.ndarray, bins: int = DEFAULT_BINS) -> np.ndarray:
    """Per-pixel ``-log2 p(bin)`` under the map's own equal-width histogram."""
    if bins < 2:
        raise ValueError("bins must be at least 2")
    m = np.asarray(feature_map, dtype=np.float64)
    if not np.isfinite(m).all():
        raise ValueError("feature map contains non-finite values")
    lo, hi = m.min(), m.max()
    if hi == lo:
        return np.zeros_like(m)
    idx = np.clip(((m - lo) / (hi - lo) * bins).astype(np.int64), 0, bins - 1)
    counts = np.bincount(idx.ravel(), minlength=bins)
    return -np.log2(counts[idx] / m.size)


def normalize01(m: np.ndarray) -> np.ndarray:
    lo, hi = m.min(), m.max()
    if hi - lo <= 0:
        return np.zeros_like(m, dtype=np.float64)
    return (m - lo) / (hi - lo)


def rarity_map(feature_map: np.ndarray, bins: int = DEFAULT_BINS) -> np.ndarray:
    return normalize01(self_information(feature_map, bins))


def conspicuity_from_stack(stack: FeatureMapStack, fusion_weights: Sequence[float],
                           bins: int = DEFAULT_BINS) -> np.ndarray:
    w = np.asarray(fusion_weights, dtype=np.float64)
    if w.shape != (stack.maps.shape[0],):
        raise ValueError(f"expected {stack.maps.shape[0]} fusion weights, got {w.size}")
    if (w < 0).any() or w.sum() <= 0:
        raise ValueError("fusion weights must be nonnegative with a positive sum")
    acc = np.zeros(stack.maps.shape[1:])
    for wi, fm in zip(w, stack.maps):
        if wi:
            acc += wi * rarity_map(fm, bins)
    return normalize01(acc / w.sum())


def _steer(gx, gy, theta):
    return np.cos(theta) * gx + np.sin(theta) * gy


def default_filter_bank() -> np.ndarray:
    """64 fixed 3x3 kernels: 24 oriented edges, 24 oriented lines (both
    polarities), 8 center-surround, 8 neighbour differences."""
    sobel_x = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64) / 8.0
    sobel_y = sobel_x.T
    dxx = np.array([[1, -2, 1], [2, -4, 2], [1, -2, 1]], dtype=np.float64) / 8.0
    dyy = dxx.T
    dxy = np.array([[1, 0, -1], [0, 0, 0], [-1, 0, 1]], dtype=np.float64) / 4.0
    bank = []
    for i in range(24):
        bank.append(_steer(sobel_x, sobel_y, 2 * np.pi * i / 24))
    for i in range(12):
        t = np.pi * i / 12
        line = np.cos(t) ** 2 * dxx + 2 * np.sin(t) * np.cos(t) * dxy + np.sin(t) ** 2 * dyy
        bank.extend([line, -line])
    lap4 = np.array([[0, -1, 0], [-1, 4, -1], [0, -1, 0]], dtype=np.float64) / 4.0
    lap8 = np.array([[-1, -1, -1], [-1, 8, -1], [-1, -1, -1]], dtype=np.float64) / 8.0
    diag = np.array([[-1, 0, -1], [0, 4, 0], [-1, 0, -1]], dtype=np.float64) / 4.0
    dog = np.array([[-1, -2, -1], [-2, 12, -2], [-1, -2, -1]], dtype=np.float64) / 12.0
    for k in (lap4, lap8, diag, dog):
        bank.extend([k, -k])
    for dy, dx in ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1)):
        k = np.zeros((3, 3))
        k[1 + dy, 1 + dx] = 1.0
        k[1, 1] = -1.0
        bank.append(k)
    out = np.stack(bank)
    out.setflags(write=False)
    return out


def filter_bank_maps(image: np.ndarray, bank: np.ndarray | Sequence[np.ndarray] | None = None,
                     level: int = 1) -> FeatureMapStack:
    """Same-size correlation of a 2-D image with each kernel, edges replicated."""
    bank = default_filter_bank() if bank is None else np.asarray(bank, dtype=np.float64)
    if len(bank) == 0:
        raise ValueError("filter bank is empty")
    img = np.asarray(image, dtype=np.float64)
    maps = np.stack([ndimage.correlate(img, k, mode="nearest") for k in bank])
    return FeatureMapStack(maps, level)


def opponent_channels(image: np.ndarray) -> list[np.ndarray]:
    """The two input streams: luminance and red-green opponency."""
    img = np.asarray(image, dtype=np.float64)
    return [luminance(img), img[..., 0] - img[..., 1]]


def conspicuity_map(image: np.ndarray, bank: np.ndarray | None = None,
                    stream_weights: Sequence[float] = (0.5, 0.5),
                    bins: int = DEFAULT_BINS, feature_stacks: Sequence[FeatureMapStack] | None = None
                    ) -> np.ndarray:
    """Conspicuity of an RGB frame in [0, 1].

    ``feature_stacks`` replaces the built-in filter-bank features, e.g. with
    maps computed by an external encoder; the stacks must match the frame size.
    """
    if feature_stacks is None:
        feature_stacks = [filter_bank_maps(ch, bank) for ch in opponent_channels(image)]
    sw = np.asarray(stream_weights, dtype=np.float64)
    if sw.shape != (len(feature_stacks),) or (sw < 0).any() or sw.sum() <= 0:
        raise ValueError("need one nonnegative stream weight per feature stack")
    acc = 0.0
    for wi, stack in zip(sw, feature_stacks):
        uniform = np.ones(stack.maps.shape[0])
        acc = acc + wi * conspicuity_from_stack(stack, uniform, bins)
    return normalize01(acc / sw.sum())


def merge_with_raw(image: np.ndarray, conspicuity: np.ndarray, alpha: float = 0.3) -> np.ndarray:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    h, w = image.shape[:2]
    c = resize_bilinear(conspicuity, h, w)
    out = (1.0 - alpha) * image.astype(np.float64) + alpha * (c[..., None] * 255.0)
    return quantize255(out)


# --------------------------------------------------------------------------
# weighted mask

@dataclass(frozen=True)
class MaskGeometry:
    """Tier layout as fractions of the ROI width/height."""

    corner_w: float = 0.22
    corner_h: float = 0.45
    band_w: float = 0.30
    band_h: float = 0.20
    ring: float = 0.05

    def __post_init__(self):
        for name in ("corner_w", "corner_h", "band_w", "band_h"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if not 0.0 <= self.ring <= 1.0:
            raise ValueError("ring must lie in [0, 1]")

    def high_rects(self) -> list[tuple[float, float, float, float]]:
        """Normalized half-open rectangles ``(x0, y0, x1, y1)`` of the high tier."""
        return [
            (0.0, 1.0 - self.corner_h, self.corner_w, 1.0),
            (1.0 - self.corner_w, 1.0 - self.corner_h, 1.0, 1.0),
            (0.5 - self.band_w / 2, 0.0, 0.5 + self.band_w / 2, self.band_h),
        ]


@dataclass(frozen=True)
class WeightedMask:
    weights: np.ndarray  # (H, W) float
    tiers: np.ndarray    # (H, W) int: 0 rest, 1 transition, 2 high

    def tier_counts(self) -> tuple[int, int, int]:
        c = np.bincount(self.tiers.ravel(), minlength=3)
        return int(c[TIER_REST]), int(c[TIER_TRANSITION]), int(c[TIER_HIGH])


def _rect_cover(n: int, lo: float, hi: float) -> np.ndarray:
    # pixel i is covered when its center (i + 0.5) / n lies in [lo, hi)
    centers = (np.arange(n) + 0.5) / n
    return (centers >= lo) & (centers < hi)


def build_weighted_mask(roi_w: int, roi_h: int, geometry: MaskGeometry = MaskGeometry(),
                        omega: float = OMEGA, omega_prime: float = OMEGA_PRIME,
                        w_high: float = W_HIGH) -> WeightedMask:
    if roi_w < 1 or roi_h < 1:
        raise ValueError("ROI must be at least 1x1")
    if not omega < omega_prime < w_high:
        raise ValueError("tier weights must satisfy omega < omega' < w_high")
    high = np.zeros((roi_h, roi_w), dtype=bool)
    near = np.zeros_like(high)
    r = geometry.ring
    for x0, y0, x1, y1 in geometry.high_rects():
        high |= _rect_cover(roi_h, y0, y1)[:, None] & _rect_cover(roi_w, x0, x1)[None, :]
        near |= (_rect_cover(roi_h, y0 - r, y1 + r)[:, None]
                 & _rect_cover(roi_w, x0 - r, x1 + r)[None, :])
    if not high.any():
        raise ValueError("mask geometry leaves the high-weight tier empty at this ROI size")
    tiers = np.where(high, TIER_HIGH, np.where(near, TIER_TRANSITION, TIER_REST))
    weights = np.array([omega, omega_prime, w_high])[tiers]
    return WeightedMask(weights, tiers)


def fuse_mask(roi: np.ndarray, mask: WeightedMask) -> np.ndarray:
    """Elementwise product of the mask with every channel, quantized once."""
    if roi.shape[:2] != mask.weights.shape:
        raise ValueError(f"ROI {roi.shape[:2]} and mask {mask.weights.shape} differ in size")
    return quantize255(roi.astype(np.float64) * mask.weights[..., None])


def load_geometry_file(path) -> MaskGeometry:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for i, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{i}: expected 'key = value'")
            values[key.strip()] = float(value)
    return MaskGeometry(**values)
