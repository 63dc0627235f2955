"""Small raster helpers shared across stages."""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1


def philox(*words: int) -> np.random.Generator:
    """Counter-based generator keyed by up to two 64-bit words."""
    key = [w & MASK64 for w in words] + [0] * (2 - len(words))
    return np.random.Generator(np.random.Philox(key=np.array(key[:2], dtype=np.uint64)))


def to_unit(image: np.ndarray) -> np.ndarray:
    return image.astype(np.float64) / 255.0


# absorbs the binary noise of a /255 then *255 round trip so exact halves stay halves
TIE_EPS = 1e-9


def quantize(values01: np.ndarray) -> np.ndarray:
    """Clamp [0, 1] reals to 8-bit, rounding half away from zero."""
    v = np.clip(np.asarray(values01, dtype=np.float64) * 255.0, 0.0, 255.0)
    return np.floor(v + 0.5 + TIE_EPS).astype(np.uint8)


def quantize255(values: np.ndarray) -> np.ndarray:
    """Same as :func:`quantize` for values already on the 0..255 scale."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 255.0)
    return np.floor(v + 0.5 + TIE_EPS).astype(np.uint8)


def _bilinear_axis(n_in: int, n_out: int):
    # half-pixel centers, edge-replicated
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling of an (H, W) or (H, W, C) array; returns float64."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()
    y0, y1, fy = _bilinear_axis(h, out_h)
    x0, x1, fx = _bilinear_axis(w, out_w)
    if img.ndim == 3:
        fy = fy[:, None, None]
        fx = fx[None, :, None]
    else:
        fy = fy[:, None]
        fx = fx[None, :]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def luminance(image: np.ndarray) -> np.ndarray:
    """Rec. 601 luma of an RGB raster, same scale as the input."""
    img = np.asarray(image, dtype=np.float64)
    return img @ np.array([0.299, 0.587, 0.114])
