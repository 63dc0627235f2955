"""Crammer-Singer multiclass linear SVM.

Objective, for ``k`` class weight rows ``w_i`` and ``n`` samples::

    0.5 * sum_i ||w_i||^2 + (c / n) * sum_m xi_m
    xi_m = max(0, max_y [margin_scale * Delta(y_m, y) + x_m.w_y - x_m.w_{y_m}])

with ``Delta`` the 0/1 label loss and ``margin_scale`` defaulting to 100.
There is no bias term; append a constant feature for one.

Solver: projected stochastic subgradient descent (Pegasos form) with step
``c / t`` (``lambda = 1 / c``) over seeded per-epoch shuffles, projection onto
the ball that must contain the optimum, and a t-weighted iterate average.  At
each epoch boundary the averaged iterate is scored on the training objective
and kept only if it improves on the last reported one, so the reported
objective never increases.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .imaging import philox

SVM_MAGIC = b"TLSV"
SVM_VERSION = 1
DEFAULT_MARGIN = 100.0


@dataclass(frozen=True)
class SvmModel:
    W: np.ndarray               # (k, d)
    c: float
    margin_scale: float = DEFAULT_MARGIN
    classes: tuple[int, ...] = (0, 1, 2, 3)
    mean: np.ndarray | None = None   # feature standardization, applied before scoring
    scale: np.ndarray | None = None
    history: tuple[float, ...] = ()

    @property
    def k(self) -> int:
        return self.W.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[1]

    def standardize(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.d:
            raise ValueError(f"expected {self.d} features, got {X.shape[-1]}")
        if self.mean is not None:
            X = (X - self.mean) / self.scale
        return X


def standardization(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean and std (population).

    Zero-variance dimensions pass through untouched (mean 0, scale 1), so an
    appended constant-1 column keeps acting as a bias feature.
    """
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    flat = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    mean[flat] = 0.0
    std[flat] = 1.0
    return mean, std


def append_bias(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return np.concatenate([X, np.ones(X.shape[:-1] + (1,))], axis=-1)


def _label_index(model_classes, y) -> np.ndarray:
    lookup = {c: i for i, c in enumerate(model_classes)}
    try:
        return np.array([lookup[int(v)] for v in y], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"label {exc.args[0]} is not one of the model classes") from None


def _slacks(W, X, yi, margin):
    scores = X @ W.T
    n = len(yi)
    true = scores[np.arange(n), yi]
    aug = scores + margin
    aug[np.arange(n), yi] = true
    return np.maximum(0.0, np.max(aug, axis=1) - true)


def _objective(W, X, yi, c, margin):
    return 0.5 * float(np.sum(W * W)) + c / len(yi) * float(np.sum(_slacks(W, X, yi, margin)))


def slack_vector(model: SvmModel, X: np.ndarray, y) -> np.ndarray:
    return _slacks(model.W, model.standardize(X), _label_index(model.classes, y), model.margin_scale)


def objective(model: SvmModel, X: np.ndarray, y) -> float:
    Xs = model.standardize(X)
    return _objective(model.W, Xs, _label_index(model.classes, y), model.c, model.margin_scale)


def decision_scores(model: SvmModel, x: np.ndarray) -> np.ndarray:
    return model.standardize(x) @ model.W.T


def predict(model: SvmModel, x: np.ndarray):
    """Class id(s) of maximal score; ties go to the lowest class id."""
    scores = decision_scores(model, x)
    idx = np.argmax(scores, axis=-1)  # first maximum == lowest class id
    classes = np.asarray(model.classes)
    return int(classes[idx]) if np.ndim(idx) == 0 else classes[idx]


def fit(X: np.ndarray, y, c: float = 1.0, epochs: int = 50, seed: int = 0,
        margin_scale: float = DEFAULT_MARGIN, classes=None, standardize: bool = True) -> SvmModel:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if c <= 0:
        raise ValueError("c must be positive")
    if epochs < 1:
        raise ValueError("epochs must be at least 1")
    if X.ndim != 2 or len(X) != len(y) or len(X) == 0:
        raise ValueError("X must be (n, d) with one label per row")
    if not np.isfinite(X).all():
        raise ValueError("features contain non-finite values")
    classes = tuple(int(v) for v in (classes if classes is not None else range(4)))
    missing = sorted(set(classes) - {int(v) for v in y})
    if missing:
        raise ValueError(f"classes missing from the training set: {missing}")
    yi = _label_index(classes, y)
    n, d = X.shape
    k = len(classes)
    if standardize:
        mean, scale = standardization(X)
        Xs = (X - mean) / scale
    else:
        mean = scale = None
        Xs = X

    lam = 1.0 / c
    radius = np.sqrt(2.0 * c * margin_scale)  # 0.5||W*||^2 <= objective(0) = c * margin
    W = np.zeros((k, d))
    avg = np.zeros((k, d))
    weight_sum = 0.0
    best_W = W.copy()
    best_obj = _objective(W, Xs, yi, c, margin_scale)
    history = [best_obj]
    rng = philox(seed, 0x5E7)
    t = 0
    rows = np.arange(k)
    for _ in range(epochs):
        for m in rng.permutation(n):
            t += 1
            x = Xs[m]
            s = W @ x + margin_scale * (rows != yi[m])
            s[yi[m]] = W[yi[m]] @ x
            j = int(np.argmax(s))
            eta = 1.0 / (lam * t)
            W *= 1.0 - eta * lam
            if j != yi[m] and s[j] - s[yi[m]] > 0:
                W[yi[m]] += eta * x
                W[j] -= eta * x
            norm = np.sqrt(np.sum(W * W))
            if norm > radius:
                W *= radius / norm
            avg += t * W
            weight_sum += t
        cand = avg / weight_sum
        obj = _objective(cand, Xs, yi, c, margin_scale)
        if obj <= best_obj:
            best_W, best_obj = cand.copy(), obj
        history.append(best_obj)
    return SvmModel(best_W, float(c), float(margin_scale), classes, mean, scale, tuple(history))


def with_weights(model: SvmModel, W: np.ndarray) -> SvmModel:
    return replace(model, W=np.asarray(W, dtype=np.float64))


# --------------------------------------------------------------------------
# files

def save_model(path: str | Path, model: SvmModel) -> None:
    """TLSV layout: magic, version/k/d (u32), margin_scale/c (f64), W, mean, scale (f64).

    Class ids are implicit (``0..k-1``)."""
    if tuple(model.classes) != tuple(range(model.k)):
        raise ValueError("only models over class ids 0..k-1 can be saved")
    mean = model.mean if model.mean is not None else np.zeros(model.d)
    scale = model.scale if model.scale is not None else np.ones(model.d)
    with open(path, "wb") as fh:
        fh.write(SVM_MAGIC + struct.pack("<III", SVM_VERSION, model.k, model.d))
        fh.write(struct.pack("<dd", model.margin_scale, model.c))
        for arr in (model.W, mean, scale):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path: str | Path) -> SvmModel:
    data = Path(path).read_bytes()
    if len(data) < 32 or data[:4] != SVM_MAGIC:
        raise ValueError(f"{path}: not a TLSV model file")
    version, k, d = struct.unpack_from("<III", data, 4)
    if version != SVM_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    margin, c = struct.unpack_from("<dd", data, 16)
    pos = 32
    expected = pos + 8 * (k * d + 2 * d)
    if len(data) != expected:
        raise ValueError(f"{path}: size {len(data)} does not match header (expected {expected})")
    vals = np.frombuffer(data, dtype="<f8", offset=pos).astype(np.float64)
    W = vals[:k * d].reshape(k, d).copy()
    mean = vals[k * d:k * d + d].copy()
    scale = vals[k * d + d:].copy()
    return SvmModel(W, c, margin, tuple(range(k)), mean, scale)
