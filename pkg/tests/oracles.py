"""Independent reference implementations used by the tests.

Each oracle is written from the documented formulas with plain Python
scalars or explicit loops, sharing no code with the package.
"""

from __future__ import annotations

import colorsys
import math

import numpy as np

# --------------------------------------------------------------------------
# night grading, one pixel at a time


def _to_linear(v):
    a = abs(v)
    out = a / 12.92 if a <= 0.04045 else ((a + 0.055) / 1.055) ** 2.4
    return math.copysign(out, v)


def _to_srgb(v):
    a = abs(v)
    out = a * 12.92 if a <= 0.0031308 else 1.055 * a ** (1 / 2.4) - 0.055
    return math.copysign(out, v)


def _luma709(r, g, b):
    return min(1.0, max(0.0, 0.2126 * r + 0.7152 * g + 0.0722 * b))


def _ramp(x):
    if x <= 0:
        return 0.0
    return 0.5 * (1 - math.cos(math.pi * min(x, 1.0)))


def night_pixel(pixel, p) -> tuple[int, int, int]:
    """Grade one 8-bit pixel with an ``AdjustmentParams``-like object."""
    r, g, b = (v / 255.0 for v in pixel)
    if p.exposure:
        f = 2.0 ** (p.exposure / 100.0)
        r, g, b = (_to_srgb(_to_linear(v) * f) for v in (r, g, b))
    k = 1 + p.contrast / 100.0
    r, g, b = ((v - 0.5) * k + 0.5 for v in (r, g, b))
    r, g, b = (v + p.brightness / 100.0 for v in (r, g, b))
    if p.highlights:
        gain = 1 + p.highlights / 100.0 * _ramp((_luma709(r, g, b) - 0.5) * 2)
        r, g, b = r * gain, g * gain, b * gain
    if p.shadows:
        gain = 1 + p.shadows / 100.0 * _ramp((0.5 - _luma709(r, g, b)) * 2)
        r, g, b = r * gain, g * gain, b * gain
    step = 30.0 / 255.0
    r += p.temperature / 100.0 * step
    g -= p.tint / 100.0 * step
    b -= p.temperature / 100.0 * step
    if p.hue_set_to is not None or p.saturation:
        clip = [min(1.0, max(0.0, v)) for v in (r, g, b)]
        h, light, s = colorsys.rgb_to_hls(*clip)
        if p.hue_set_to is not None:
            h = p.hue_set_to / 360.0
        s = min(1.0, max(0.0, s * (1 + p.saturation / 100.0)))
        r, g, b = colorsys.hls_to_rgb(h, light, s)
    out = []
    for v, gp in zip((r, g, b), (p.gamma_r, p.gamma_g, p.gamma_b)):
        if gp:
            v = math.copysign(abs(v) ** (1.0 / (1 + gp / 100.0)), v)
        out.append(int(math.floor(min(255.0, max(0.0, v * 255.0)) + 0.5)))
    return tuple(out)


# --------------------------------------------------------------------------
# network layers by brute force


def conv3x3_relu(x, w, b):
    """``x`` (C, H, W), ``w`` (K, C, 3, 3): zero padding, stride 1, then ReLU."""
    c, h, wd = x.shape
    k = w.shape[0]
    out = np.zeros((k, h, wd))
    for o in range(k):
        for i in range(h):
            for j in range(wd):
                acc = b[o]
                for ch in range(c):
                    for di in range(3):
                        for dj in range(3):
                            y, xx = i + di - 1, j + dj - 1
                            if 0 <= y < h and 0 <= xx < wd:
                                acc += w[o, ch, di, dj] * x[ch, y, xx]
                out[o, i, j] = max(acc, 0.0)
    return out


def max_pool2x2(x):
    c, h, w = x.shape
    out = np.zeros((c, h // 2, w // 2))
    for ch in range(c):
        for i in range(h // 2):
            for j in range(w // 2):
                out[ch, i, j] = max(x[ch, 2 * i, 2 * j], x[ch, 2 * i + 1, 2 * j],
                                    x[ch, 2 * i, 2 * j + 1], x[ch, 2 * i + 1, 2 * j + 1])
    return out


def dense_relu(x, w, b):
    out = np.zeros(w.shape[0])
    for o in range(w.shape[0]):
        acc = b[o]
        for i in range(w.shape[1]):
            acc += w[o, i] * x[i]
        out[o] = max(acc, 0.0)
    return out


# --------------------------------------------------------------------------
# multiclass SVM objective by refined grid search


def svm_objective(W, X, y, c, margin=100.0):
    total = 0.0
    for x, label in zip(X, y):
        true = float(np.dot(W[label], x))
        worst = 0.0
        for j in range(W.shape[0]):
            loss = 0.0 if j == label else margin
            worst = max(worst, loss + float(np.dot(W[j], x)) - true)
        total += worst
    return 0.5 * float(np.sum(W * W)) + c / len(y) * total


def svm_grid_minimum(X, y, k, c, margin=100.0, rounds=12, points=7):
    """Grid over the ball-bounding box of the optimum, re-centred and halved each round."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    d = X.shape[1]
    half = math.sqrt(2 * c * margin)
    center = np.zeros(k * d)
    best = None
    labels = np.arange(k)
    for _ in range(rounds):
        axes = [np.linspace(v - half, v + half, points) for v in center]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, k, d)
        scores = np.einsum("gkd,nd->gnk", grid, X)
        true = scores[:, np.arange(len(y)), y]
        aug = scores + margin * (labels[None, None, :] != y[None, :, None])
        slack = np.maximum(0.0, aug.max(-1) - true)
        obj = 0.5 * (grid ** 2).sum((1, 2)) + c / len(y) * slack.sum(1)
        i = int(np.argmin(obj))
        if best is None or obj[i] < best:
            best = float(obj[i])
        center = grid[i].ravel()
        half *= 0.5
    return best


# --------------------------------------------------------------------------
# mask rasterization, pixel by pixel


def mask_tiers(roi_w, roi_h, corner_w=0.22, corner_h=0.45, band_w=0.30, band_h=0.20, ring=0.05):
    rects = [(0.0, 1 - corner_h, corner_w, 1.0),
             (1 - corner_w, 1 - corner_h, 1.0, 1.0),
             (0.5 - band_w / 2, 0.0, 0.5 + band_w / 2, band_h)]
    tiers = np.zeros((roi_h, roi_w), dtype=int)
    for i in range(roi_h):
        for j in range(roi_w):
            cy, cx = (i + 0.5) / roi_h, (j + 0.5) / roi_w
            tier = 0
            for x0, y0, x1, y1 in rects:
                if x0 <= cx < x1 and y0 <= cy < y1:
                    tier = 2
                elif tier < 1 and x0 - ring <= cx < x1 + ring and y0 - ring <= cy < y1 + ring:
                    tier = 1
            tiers[i, j] = tier
    return tiers


# --------------------------------------------------------------------------
# rarity, from the histogram definition


def rarity_mean(maps, bins=16):
    acc = np.zeros(maps[0].shape)
    for m in maps:
        lo, hi = float(m.min()), float(m.max())
        info = np.zeros(m.shape)
        if hi > lo:
            idx = np.minimum(((m - lo) / (hi - lo) * bins).astype(int), bins - 1)
            counts = {}
            for v in idx.ravel():
                counts[v] = counts.get(v, 0) + 1
            for pos in np.ndindex(m.shape):
                info[pos] = -math.log2(counts[idx[pos]] / m.size)
            span = info.max() - info.min()
            info = (info - info.min()) / span if span > 0 else np.zeros(m.shape)
        acc += info
    acc /= len(maps)
    span = acc.max() - acc.min()
    return (acc - acc.min()) / span if span > 0 else np.zeros(acc.shape)
