"""Principal component analysis for FC-tap features, plus the feature-matrix file format."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

PCA_MAGIC = b"TLPC"
MATRIX_MAGIC = b"TLFM"
PCA_VERSION = 1


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray         # (d,)
    components: np.ndarray   # (k, d), orthonormal rows
    eigenvalues: np.ndarray  # (k,), non-increasing
    total_variance: float

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def d(self) -> int:
        return self.components.shape[1]


def _sign_fix(vectors: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude coordinate of each row positive (first index on ties)."""
    idx = np.argmax(np.abs(vectors), axis=1)
    signs = np.sign(vectors[np.arange(len(vectors)), idx])
    signs[signs == 0] = 1.0
    return vectors * signs[:, None]


def _complete_basis(basis: np.ndarray, d: int, needed: int) -> np.ndarray:
    """Extend orthonormal rows with coordinate axes, Gram-Schmidt in index order."""
    rows = list(basis)
    for j in range(d):
        if len(rows) >= needed:
            break
        v = np.zeros(d)
        v[j] = 1.0
        for _ in range(2):
            for r in rows:
                v -= (r @ v) * r
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            rows.append(v / norm)
    return np.array(rows)


def fit(X: np.ndarray, k: int = 250) -> PcaModel:
    """Top-``k`` eigenvectors of the sample covariance (divisor ``n - 1``).

    When ``n < d`` the ``n x n`` Gram matrix of the centered rows is decomposed
    instead of the ``d x d`` covariance.  Directions beyond the data rank get
    eigenvalue 0 and a deterministic orthonormal completion.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("feature matrix must be 2-D")
    n, d = X.shape
    if n < 2:
        raise ValueError("need at least two samples to fit PCA")
    if not np.isfinite(X).all():
        raise ValueError("feature matrix contains non-finite values")
    if not 1 <= k <= min(n - 1, d):
        raise ValueError(f"k={k} outside [1, min(n-1, d)] = [1, {min(n - 1, d)}]")
    mean = X.mean(axis=0)
    Xc = X - mean
    if n < d:
        gram = Xc @ Xc.T
        vals, vecs = np.linalg.eigh(gram)
        order = np.argsort(-vals, kind="stable")
        vals, vecs = vals[order], vecs[:, order]
        vals = np.clip(vals, 0.0, None)
        tol = max(vals[0], 0.0) * max(n, d) * np.finfo(float).eps
        rank = int(np.sum(vals > tol))
        r = min(rank, k)
        comps = (Xc.T @ vecs[:, :r]) / np.sqrt(vals[:r])
        comps = comps.T
        eig = vals[:r] / (n - 1)
    else:
        cov = Xc.T @ Xc / (n - 1)
        vals, vecs = np.linalg.eigh(cov)
        order = np.argsort(-vals, kind="stable")
        vals, vecs = np.clip(vals[order], 0.0, None), vecs[:, order]
        tol = max(vals[0], 0.0) * d * np.finfo(float).eps
        r = min(int(np.sum(vals > tol)), k)
        comps = vecs[:, :r].T
        eig = vals[:r]
    if r:
        # one re-orthonormalization pass removes the rounding of the Gram map-back
        q, _ = np.linalg.qr(comps.T)
        comps = q.T * np.sign(np.sum(q.T * comps, axis=1))[:, None]
    comps = _sign_fix(comps) if r else np.zeros((0, d))
    if r < k:
        comps = _complete_basis(comps, d, k)
        comps[r:] = _sign_fix(comps[r:])
        eig = np.concatenate([eig, np.zeros(k - r)])
    total = float(np.sum(Xc * Xc) / (n - 1))
    return PcaModel(mean, comps, eig, total)


def transform(model: PcaModel, x: np.ndarray) -> np.ndarray:
    """Project one vector ``(d,)`` or a batch ``(n, d)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.d:
        raise ValueError(f"expected length {model.d}, got {x.shape[-1]}")
    if not np.isfinite(x).all():
        raise ValueError("input contains non-finite values")
    return (x - model.mean) @ model.components.T


def inverse_transform(model: PcaModel, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    return z @ model.components + model.mean


def explained_variance_ratio(model: PcaModel) -> np.ndarray:
    if model.total_variance <= 0:
        return np.zeros(model.k)
    return model.eigenvalues / model.total_variance


def identity_model(d: int) -> PcaModel:
    """Pass-through model used when dimensionality reduction is disabled."""
    return PcaModel(np.zeros(d), np.eye(d), np.zeros(d), 0.0)


# --------------------------------------------------------------------------
# files

def _f64(arr) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def save_model(path: str | Path, model: PcaModel) -> None:
    with open(path, "wb") as fh:
        fh.write(PCA_MAGIC + struct.pack("<III", PCA_VERSION, model.d, model.k))
        fh.write(struct.pack("<d", model.total_variance))
        fh.write(_f64(model.mean) + _f64(model.components) + _f64(model.eigenvalues))


def _take(buf: memoryview, pos: int, n: int) -> tuple[bytes, int]:
    if pos + n > len(buf):
        raise FormatError("truncated file")
    return bytes(buf[pos:pos + n]), pos + n


def load_model(path: str | Path) -> PcaModel:
    buf = memoryview(Path(path).read_bytes())
    magic, pos = _take(buf, 0, 4)
    if magic != PCA_MAGIC:
        raise FormatError(f"{path}: not a TLPC model file")
    head, pos = _take(buf, pos, 12)
    version, d, k = struct.unpack("<III", head)
    if version != PCA_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    raw, pos = _take(buf, pos, 8)
    (total,) = struct.unpack("<d", raw)
    raw, pos = _take(buf, pos, 8 * (d + k * d + k))
    if pos != len(buf):
        raise FormatError(f"{path}: trailing bytes")
    vals = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return PcaModel(vals[:d].copy(), vals[d:d + k * d].reshape(k, d).copy(),
                    vals[d + k * d:].copy(), total)


def save_matrix(path: str | Path, X: np.ndarray, row_ids: Sequence[str]) -> None:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(row_ids) != X.shape[0]:
        raise ValueError("row ids must match the matrix rows")
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC + struct.pack("<II", *X.shape))
        for rid in row_ids:
            raw = rid.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)) + raw)
        fh.write(_f64(X))


def load_matrix(path: str | Path) -> tuple[np.ndarray, list[str]]:
    buf = memoryview(Path(path).read_bytes())
    magic, pos = _take(buf, 0, 4)
    if magic != MATRIX_MAGIC:
        raise FormatError(f"{path}: not a TLFM matrix file")
    head, pos = _take(buf, pos, 8)
    n, d = struct.unpack("<II", head)
    ids = []
    for _ in range(n):
        raw, pos = _take(buf, pos, 4)
        (length,) = struct.unpack("<I", raw)
        raw, pos = _take(buf, pos, length)
        ids.append(raw.decode("utf-8"))
    raw, pos = _take(buf, pos, 8 * n * d)
    if pos != len(buf):
        raise FormatError(f"{path}: trailing bytes")
    return np.frombuffer(raw, dtype="<f8").reshape(n, d).copy(), ids
