"""Pixel-wise day-to-night color grading.

Foreground (vehicle) and background (road) pixels receive separate sets of
photo-editor style adjustments.  The controls are percentages; their algebra,
on channel values scaled to [0, 1]:

* exposure    -- linearize sRGB, multiply by ``2 ** (p/100)``, re-encode
* contrast    -- ``(v - 0.5) * (1 + p/100) + 0.5``
* brightness  -- ``v + p/100`` (``p/100 * 255`` in 8-bit units)
* highlights  -- gain ``1 + p/100`` weighted by a cosine ramp of luminance
  above 0.5; shadows use the mirrored ramp below 0.5
* temperature -- R shifted by ``+p/100 * 30``, B by ``-p/100 * 30`` (8-bit units)
* tint        -- G shifted by ``-p/100 * 30``
* hue / saturation -- HSL: hue overwritten when a set-point is given, S scaled
  by ``1 + p/100``; the stage clips to the HSL gamut and is skipped entirely
  when it would be the identity
* gamma       -- per channel ``v ** (1 / (1 + p/100))``

Everything runs in float64; the only quantization is the final clamp to
[0, 255] and round-half-away-from-zero.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .dataset_io import BoundingBox, DataError
from .imaging import quantize

ADJUSTMENT_ORDER = (
    "exposure", "contrast", "brightness", "highlights", "shadows",
    "temperature_tint", "hue_saturation", "gamma",
)

WHITE_BALANCE_SHIFT = 30.0 / 255.0
LUMA = np.array([0.2126, 0.7152, 0.0722])


@dataclass(frozen=True)
class AdjustmentParams:
    contrast: float = 0.0
    brightness: float = 0.0
    exposure: float = 0.0
    highlights: float = 0.0
    shadows: float = 0.0
    saturation: float = 0.0
    temperature: float = 0.0
    tint: float = 0.0
    hue_set_to: float | None = None
    gamma_r: float = 0.0
    gamma_g: float = 0.0
    gamma_b: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "hue_set_to":
                if v is not None and not (0.0 <= v < 360.0):
                    raise ValueError(f"hue_set_to must lie in [0, 360), got {v}")
            elif not math.isfinite(v):
                raise ValueError(f"{f.name} must be finite")
        for g in (self.gamma_r, self.gamma_g, self.gamma_b):
            if g <= -100.0:
                raise ValueError("gamma percentages must exceed -100")


@dataclass(frozen=True)
class NightParamPair:
    foreground: AdjustmentParams
    background: AdjustmentParams


def default_night_params() -> NightParamPair:
    fg = AdjustmentParams(contrast=29, brightness=-56, exposure=44, highlights=18, shadows=-55,
                          saturation=13, temperature=6, tint=8, hue_set_to=0.0,
                          gamma_r=10, gamma_g=1, gamma_b=1)
    bg = AdjustmentParams(contrast=31, brightness=-71, exposure=-37, highlights=-72, shadows=-5,
                          saturation=-18, temperature=-56, tint=3, hue_set_to=0.0,
                          gamma_r=10, gamma_g=4, gamma_b=-23)
    return NightParamPair(fg, bg)


# --------------------------------------------------------------------------
# stages; each maps an (..., 3) float array to a new one

def _srgb_to_linear(v):
    a = np.abs(v)
    lin = np.where(a <= 0.04045, a / 12.92, ((a + 0.055) / 1.055) ** 2.4)
    return np.sign(v) * lin


def _linear_to_srgb(v):
    a = np.abs(v)
    enc = np.where(a <= 0.0031308, a * 12.92, 1.055 * a ** (1.0 / 2.4) - 0.055)
    return np.sign(v) * enc


def _exposure(rgb, p: AdjustmentParams):
    if p.exposure == 0:
        return rgb
    return _linear_to_srgb(_srgb_to_linear(rgb) * 2.0 ** (p.exposure / 100.0))


def _contrast(rgb, p):
    return (rgb - 0.5) * (1.0 + p.contrast / 100.0) + 0.5


def _brightness(rgb, p):
    return rgb + p.brightness / 100.0


def _tone_window(rgb, upper: bool):
    lum = np.clip(rgb @ LUMA, 0.0, 1.0)
    x = (lum - 0.5) / 0.5 if upper else (0.5 - lum) / 0.5
    return np.where(x > 0, 0.5 * (1.0 - np.cos(np.pi * np.clip(x, 0.0, 1.0))), 0.0)[..., None]


def _highlights(rgb, p):
    if p.highlights == 0:
        return rgb
    return rgb * (1.0 + p.highlights / 100.0 * _tone_window(rgb, upper=True))


def _shadows(rgb, p):
    if p.shadows == 0:
        return rgb
    return rgb * (1.0 + p.shadows / 100.0 * _tone_window(rgb, upper=False))


def _temperature_tint(rgb, p):
    shift = np.array([p.temperature, -p.tint, -p.temperature]) / 100.0 * WHITE_BALANCE_SHIFT
    return rgb + shift


def rgb_to_hsl(rgb):
    """Vectorized RGB -> (H in degrees, S, L) for values in [0, 1]."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = np.max(rgb, axis=-1)
    mn = np.min(rgb, axis=-1)
    d = mx - mn
    lum = (mx + mn) / 2.0
    denom = 1.0 - np.abs(2.0 * lum - 1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        sat = np.where(d > 0, d / np.where(denom > 0, denom, 1.0), 0.0)
        dd = np.where(d > 0, d, 1.0)
        h = np.where(mx == r, ((g - b) / dd) % 6.0,
                     np.where(mx == g, (b - r) / dd + 2.0, (r - g) / dd + 4.0))
    hue = np.where(d > 0, h * 60.0, 0.0) % 360.0
    return hue, np.clip(sat, 0.0, 1.0), lum


def hsl_to_rgb(hue, sat, lum):
    c = (1.0 - np.abs(2.0 * lum - 1.0)) * sat
    hp = (hue % 360.0) / 60.0
    x = c * (1.0 - np.abs(hp % 2.0 - 1.0))
    zero = np.zeros_like(c)
    sector = np.floor(hp).astype(int) % 6
    choices_r = [c, x, zero, zero, x, c]
    choices_g = [x, c, c, x, zero, zero]
    choices_b = [zero, zero, x, c, c, x]
    r = np.choose(sector, choices_r)
    g = np.choose(sector, choices_g)
    b = np.choose(sector, choices_b)
    m = lum - c / 2.0
    return np.stack([r + m, g + m, b + m], axis=-1)


def _hue_saturation(rgb, p):
    if p.hue_set_to is None and p.saturation == 0:
        return rgb
    hue, sat, lum = rgb_to_hsl(np.clip(rgb, 0.0, 1.0))
    if p.hue_set_to is not None:
        hue = np.full_like(hue, float(p.hue_set_to))
    sat = np.clip(sat * (1.0 + p.saturation / 100.0), 0.0, 1.0)
    return hsl_to_rgb(hue, sat, lum)


def _gamma(rgb, p):
    gam = np.array([p.gamma_r, p.gamma_g, p.gamma_b])
    if not gam.any():
        return rgb
    expo = 1.0 / (1.0 + gam / 100.0)
    return np.sign(rgb) * np.abs(rgb) ** expo


STAGES: dict[str, Callable] = {
    "exposure": _exposure,
    "contrast": _contrast,
    "brightness": _brightness,
    "highlights": _highlights,
    "shadows": _shadows,
    "temperature_tint": _temperature_tint,
    "hue_saturation": _hue_saturation,
    "gamma": _gamma,
}


def adjust_real(rgb: np.ndarray, params: AdjustmentParams,
                order: tuple[str, ...] = ADJUSTMENT_ORDER) -> np.ndarray:
    """Run the stages on float values in [0, 1] without quantizing."""
    out = np.asarray(rgb, dtype=np.float64)
    for name in order:
        out = STAGES[name](out, params)
    return out


def apply_adjustments_image(image: np.ndarray, params: AdjustmentParams,
                            order: tuple[str, ...] = ADJUSTMENT_ORDER) -> np.ndarray:
    return quantize(adjust_real(image.astype(np.float64) / 255.0, params, order))


def apply_adjustments(pixel, params: AdjustmentParams,
                      order: tuple[str, ...] = ADJUSTMENT_ORDER) -> tuple[int, int, int]:
    arr = np.asarray(pixel, dtype=np.float64).reshape(1, 3)
    if arr.min() < 0 or arr.max() > 255:
        raise ValueError(f"pixel {pixel} outside [0, 255]")
    out = apply_adjustments_image(arr, params, order)[0]
    return int(out[0]), int(out[1]), int(out[2])


def day_to_night(image: np.ndarray, mask: np.ndarray, params: NightParamPair | None = None,
                 order: tuple[str, ...] = ADJUSTMENT_ORDER) -> np.ndarray:
    """Grade ``mask``-true pixels with the foreground set, the rest with the background set."""
    params = params or default_night_params()
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != image.shape[:2]:
        raise DataError(f"mask shape {mask.shape} does not match image {image.shape[:2]}")
    out = np.empty_like(image, dtype=np.uint8)
    if mask.any():
        out[mask] = apply_adjustments_image(image[mask], params.foreground, order)
    if (~mask).any():
        out[~mask] = apply_adjustments_image(image[~mask], params.background, order)
    return out


def mask_from_box(box: BoundingBox, image_dims: tuple[int, int]) -> np.ndarray:
    """Boolean (H, W) mask, true inside the denormalized box. ``image_dims`` is (H, W)."""
    h, w = image_dims
    x0, y0, x1, y1 = box.to_pixels(w, h)
    mask = np.zeros((h, w), dtype=bool)
    if x1 <= x0 or y1 <= y0:
        warnings.warn("foreground box is empty after clamping; whole image treated as background",
                      stacklevel=2)
        return mask
    mask[y0:y1, x0:x1] = True
    return mask


def mask_from_polygons(polygons, image_dims: tuple[int, int]) -> np.ndarray:
    """Boolean (H, W) mask from normalized (x, y) vertex lists.

    A pixel is foreground when its center lies inside any polygon (even-odd rule).
    """
    h, w = image_dims
    cy, cx = np.mgrid[0:h, 0:w]
    px, py = (cx + 0.5) / w, (cy + 0.5) / h
    mask = np.zeros((h, w), dtype=bool)
    for poly in polygons:
        pts = np.asarray(poly, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
            raise DataError("a polygon needs at least three (x, y) vertices")
        inside = np.zeros((h, w), dtype=bool)
        for (x0, y0), (x1, y1) in zip(pts, np.roll(pts, -1, axis=0)):
            if y0 == y1:
                continue
            crosses = (y0 > py) != (y1 > py)
            x_at = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
            inside ^= crosses & (px < x_at)
        mask |= inside
    return mask


def load_polygon_file(path: str | Path) -> list[list[tuple[float, float]]]:
    """One polygon per line: ``x1 y1 x2 y2 ...`` in normalized coordinates."""
    polygons = []
    for i, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].split()
        if not line:
            continue
        try:
            vals = [float(v) for v in line]
        except ValueError:
            raise DataError(f"{path}:{i}: non-numeric vertex") from None
        if len(vals) % 2 or len(vals) < 6:
            raise DataError(f"{path}:{i}: expected at least three x y pairs")
        polygons.append(list(zip(vals[0::2], vals[1::2])))
    return polygons


def load_params_file(path: str | Path, base: NightParamPair | None = None) -> NightParamPair:
    """Override defaults from ``foreground.<field> = value`` / ``background.<field> = value`` lines."""
    pair = base or default_night_params()
    regions = {"foreground": pair.foreground, "background": pair.background}
    valid = {f.name for f in fields(AdjustmentParams)}
    for i, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        region, _, name = key.strip().partition(".")
        region = {"fg": "foreground", "bg": "background"}.get(region, region)
        if not sep or region not in regions or name not in valid:
            raise ValueError(f"{path}:{i}: expected '<foreground|background>.<field> = value'")
        value = value.strip()
        if name == "hue_set_to" and value.lower() in ("none", ""):
            parsed = None
        else:
            parsed = float(value)
        regions[region] = replace(regions[region], **{name: parsed})
    return NightParamPair(regions["foreground"], regions["background"])
