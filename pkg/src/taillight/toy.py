"""Synthetic rear-vehicle ROIs with known behavior labels.

Each canvas is a stylized car rear: a body panel, a dark rear window, two
taillight blobs at the bottom corners and a brake band above the window.
Which lights are lit (and in what color) encodes the class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset_io import FULL_FRAME, AnnotatedFrame, BehaviorClass
from .imaging import philox

BRIGHT_RED = (255.0, 28.0, 24.0)
DIM_RED = (120.0, 18.0, 16.0)
AMBER = (255.0, 168.0, 0.0)


@dataclass(frozen=True)
class ToyRoiSpec:
    height: int = 64
    width: int = 64
    lamp_w: float = 0.16      # taillight blob size, fraction of the canvas
    lamp_h: float = 0.22
    lamp_y: float = 0.68      # blob center, fraction of height
    lamp_inset: float = 0.12  # blob center distance from the side edge
    band_w: float = 0.26
    band_h: float = 0.06
    band_y: float = 0.10
    position_jitter: float = 0.03
    color_jitter: float = 18.0
    noise_sigma: float = 6.0
    brightness_jitter: float = 0.12


def lamp_colors(label: BehaviorClass):
    """(left corner, right corner, brake band) colors; ``None`` = unlit."""
    if label == BehaviorClass.BRAKING:
        return BRIGHT_RED, BRIGHT_RED, BRIGHT_RED
    if label == BehaviorClass.RUNNING:
        return DIM_RED, DIM_RED, None
    if label == BehaviorClass.LEFT_TURN:
        return AMBER, DIM_RED, None
    return DIM_RED, AMBER, None


def _ellipse(h, w, cy, cx, ry, rx):
    yy, xx = np.mgrid[0:h, 0:w]
    return ((yy + 0.5 - cy) / ry) ** 2 + ((xx + 0.5 - cx) / rx) ** 2 <= 1.0


def render_toy_roi(label: BehaviorClass, spec: ToyRoiSpec = ToyRoiSpec(),
                   rng: np.random.Generator | None = None) -> np.ndarray:
    """Draw one ROI.  ``rng=None`` renders the zero-jitter prototype."""
    h, w = spec.height, spec.width

    def jit(scale):
        return 0.0 if rng is None else float(rng.uniform(-scale, scale))

    body = np.array([70.0, 72.0, 78.0]) + (0 if rng is None else rng.uniform(-25, 25, 3))
    img = np.broadcast_to(body, (h, w, 3)).copy()
    # road strip and rear window give the canvas some structure
    img[int(0.88 * h):] = 40.0
    wy0, wy1 = int(0.2 * h), int(0.45 * h)
    wx0, wx1 = int(0.22 * w), int(0.78 * w)
    img[wy0:wy1, wx0:wx1] = body * 0.35

    left, right, band = lamp_colors(label)
    for color, side in ((left, 0), (right, 1)):
        cx = (spec.lamp_inset + jit(spec.position_jitter)) * w
        if side:
            cx = w - cx
        cy = (spec.lamp_y + jit(spec.position_jitter)) * h
        m = _ellipse(h, w, cy, cx, spec.lamp_h * h / 2, spec.lamp_w * w / 2)
        c = np.array(color) + (0 if rng is None else rng.uniform(-spec.color_jitter, spec.color_jitter, 3))
        img[m] = c
    bx0 = int(round((0.5 - spec.band_w / 2 + jit(spec.position_jitter)) * w))
    by0 = int(round((spec.band_y + jit(spec.position_jitter)) * h))
    bx1 = bx0 + max(1, int(round(spec.band_w * w)))
    by1 = by0 + max(1, int(round(spec.band_h * h)))
    if band is not None:
        img[by0:by1, bx0:bx1] = np.array(band) + (
            0 if rng is None else rng.uniform(-spec.color_jitter, spec.color_jitter, 3))
    else:
        img[by0:by1, bx0:bx1] = body * 0.8

    if rng is not None:
        img *= 1.0 + rng.uniform(-spec.brightness_jitter, spec.brightness_jitter)
        img += rng.normal(0.0, spec.noise_sigma, img.shape)
    return np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)


def generate_toy_dataset(spec: ToyRoiSpec = ToyRoiSpec(), n_per_class: int = 200,
                         seed: int = 0) -> list[AnnotatedFrame]:
    """Balanced, deterministic toy dataset; every box covers the full canvas."""
    if n_per_class < 1:
        raise ValueError("n_per_class must be at least 1")
    frames = []
    for label in BehaviorClass:
        for i in range(n_per_class):
            rng = philox(seed, (int(label) << 32) | i)
            frames.append(AnnotatedFrame(render_toy_roi(label, spec, rng), FULL_FRAME, label,
                                         f"toy_{label.label}_{i:05d}"))
    return frames


def reference_images(count: int = 20, size: int = 48, seed: int = 20240901) -> list[np.ndarray]:
    """Frozen natural-ish image set used to calibrate and check corruption severities.

    Alternates toy ROIs with smooth gradient scenes so both flat and textured
    content are represented.
    """
    spec = ToyRoiSpec(height=size, width=size)
    out = []
    for i in range(count):
        rng = philox(seed, i)
        if i % 2 == 0:
            out.append(render_toy_roi(BehaviorClass(i // 2 % 4), spec, rng))
        else:
            yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
            base = rng.uniform(40, 200, 3)
            tilt = rng.uniform(-80, 80, (2, 3))
            img = base + yy[..., None] * tilt[0] + xx[..., None] * tilt[1]
            img += 30 * np.sin(xx[..., None] * rng.uniform(3, 12) + rng.uniform(0, 6))
            img += rng.normal(0, 4, img.shape)
            out.append(np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8))
    return out
