"""Image/annotation ingest, ROI cropping and deterministic dataset splits.

Frames are held as ``uint8`` arrays of shape ``(H, W, 3)``.  Annotations use
the YOLO text convention ``class cx cy w h`` with coordinates normalized to
the image size.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
SPLIT_NAMES = ("train", "validation", "test")
DEFAULT_RATIOS = (0.60, 0.15, 0.25)


class BehaviorClass(enum.IntEnum):
    BRAKING = 0
    RUNNING = 1
    LEFT_TURN = 2
    RIGHT_TURN = 3

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_name(cls, name: str) -> "BehaviorClass":
        try:
            return cls[name.upper().replace("-", "_")]
        except KeyError:
            raise ValueError(f"unknown behavior class {name!r}") from None


NUM_CLASSES = len(BehaviorClass)


class AnnotationError(ValueError):
    """A YOLO annotation line could not be accepted."""

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class DataError(ValueError):
    """Dataset layout or content problem."""


@dataclass(frozen=True)
class BoundingBox:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("cx", "cy", "w", "h"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0.0 or v > 1.0:
                raise AnnotationError(f"coordinate {name}={v} outside [0, 1]")
        if self.w <= 0.0 or self.h <= 0.0:
            raise AnnotationError("box width and height must be positive")

    def to_pixels(self, image_w: int, image_h: int) -> tuple[int, int, int, int]:
        """Half-open pixel rectangle ``(x0, y0, x1, y1)`` clamped to the raster."""
        x0 = _round_half_up((self.cx - self.w / 2.0) * image_w)
        x1 = _round_half_up((self.cx + self.w / 2.0) * image_w)
        y0 = _round_half_up((self.cy - self.h / 2.0) * image_h)
        y1 = _round_half_up((self.cy + self.h / 2.0) * image_h)
        x0, x1 = min(max(x0, 0), image_w), min(max(x1, 0), image_w)
        y0, y1 = min(max(y0, 0), image_h), min(max(y1, 0), image_h)
        return x0, y0, max(x1, x0), max(y1, y0)


FULL_FRAME = BoundingBox(0.5, 0.5, 1.0, 1.0)


def _round_half_up(v: float) -> int:
    # tolerance absorbs binary noise such as 0.3 * 10 = 3.0000000000000004
    return int(math.floor(v + 0.5 + 1e-9))


@dataclass(frozen=True)
class Provenance:
    """Where an image came from.  ``night`` and ``corruption`` stack."""

    night: bool = False
    corruption: tuple[str, str, int] | None = None  # (kind, severity, seed)

    @property
    def tag(self) -> str:
        parts = []
        if self.night:
            parts.append("night")
        if self.corruption is not None:
            parts.append("{}:{}:{}".format(*self.corruption))
        return "+".join(parts) or "clean"


CLEAN = Provenance()


@dataclass(frozen=True)
class RoiImage:
    image: np.ndarray
    provenance: Provenance = CLEAN


@dataclass(frozen=True, eq=False)
class AnnotatedFrame:
    image: np.ndarray
    box: BoundingBox
    label: BehaviorClass
    source_id: str
    provenance: Provenance = CLEAN

    def __post_init__(self):
        img = self.image
        if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
            raise DataError(f"{self.source_id}: expected an RGB raster, got shape {img.shape}")
        if img.dtype != np.uint8:
            raise DataError(f"{self.source_id}: expected uint8 pixels, got {img.dtype}")

    def with_image(self, image: np.ndarray, provenance: Provenance, suffix: str) -> "AnnotatedFrame":
        return replace(self, image=image, provenance=provenance,
                       source_id=f"{self.source_id}__{suffix}")


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[AnnotatedFrame, ...]
    validation: tuple[AnnotatedFrame, ...]
    test: tuple[AnnotatedFrame, ...]
    seed: int
    ratios: tuple[float, float, float] = DEFAULT_RATIOS

    def parts(self) -> dict[str, tuple[AnnotatedFrame, ...]]:
        return {"train": self.train, "validation": self.validation, "test": self.test}


# --------------------------------------------------------------------------
# annotations

def parse_annotation(line: str, image_w: int, image_h: int,
                     line_no: int | None = None) -> tuple[int, BoundingBox]:
    """Parse one ``class cx cy w h`` line.

    ``image_w``/``image_h`` are validated here so that callers get the same
    error path for a bad raster as for a bad line; the returned box stays
    normalized (use :meth:`BoundingBox.to_pixels` to denormalize).
    """
    if image_w < 1 or image_h < 1:
        raise AnnotationError(f"invalid image size {image_w}x{image_h}", line_no)
    tokens = line.split()
    if len(tokens) != 5:
        raise AnnotationError(f"expected 5 fields, got {len(tokens)}", line_no)
    try:
        class_id = int(tokens[0])
    except ValueError:
        raise AnnotationError(f"non-integer class id {tokens[0]!r}", line_no) from None
    if not 0 <= class_id < NUM_CLASSES:
        raise AnnotationError(f"class id out of range: {class_id}", line_no)
    try:
        cx, cy, w, h = (float(t) for t in tokens[1:])
    except ValueError:
        raise AnnotationError("non-numeric coordinate field", line_no) from None
    try:
        box = BoundingBox(cx, cy, w, h)
    except AnnotationError as exc:
        raise AnnotationError(str(exc), line_no) from None
    return class_id, box


def format_annotation(class_id: int, box: BoundingBox) -> str:
    return f"{int(class_id)} {box.cx!r} {box.cy!r} {box.w!r} {box.h!r}"


def read_label_file(path: Path, image_w: int, image_h: int) -> tuple[int, BoundingBox]:
    text = Path(path).read_text(encoding="utf-8")
    entries = []
    for i, raw in enumerate(text.splitlines(), start=1):
        if raw.strip():
            entries.append(parse_annotation(raw, image_w, image_h, line_no=i))
    if len(entries) != 1:
        raise DataError(f"{path}: expected exactly one box, found {len(entries)}")
    return entries[0]


# --------------------------------------------------------------------------
# images

def load_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def save_image(path: str | Path, image: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8)).save(path)


def crop_roi(frame: AnnotatedFrame) -> RoiImage:
    h, w = frame.image.shape[:2]
    x0, y0, x1, y1 = frame.box.to_pixels(w, h)
    if x1 <= x0 or y1 <= y0:
        raise DataError(f"{frame.source_id}: degenerate box after clamping")
    return RoiImage(frame.image[y0:y1, x0:x1].copy(), frame.provenance)


# --------------------------------------------------------------------------
# dataset directories

def find_images(directory: str | Path) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_dataset(root: str | Path) -> tuple[list[AnnotatedFrame], dict[str, str]]:
    """Load ``root/images`` + ``root/labels`` and the optional ``root/splits.txt``.

    Returns the frames (sorted by stem) and the stem -> split overrides.
    """
    root = Path(root)
    images = find_images(root / "images")
    if not images:
        raise DataError(f"no images under {root / 'images'}")
    frames = []
    for path in images:
        label_path = root / "labels" / f"{path.stem}.txt"
        if not label_path.exists():
            raise DataError(f"missing label file for {path.name}")
        image = load_image(path)
        class_id, box = read_label_file(label_path, image.shape[1], image.shape[0])
        frames.append(AnnotatedFrame(image, box, BehaviorClass(class_id), path.stem))
    return frames, read_split_overrides(root / "splits.txt")


def read_split_overrides(path: Path) -> dict[str, str]:
    if not path.exists():
        return {}
    overrides = {}
    for i, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2 or parts[1] not in SPLIT_NAMES:
            raise DataError(f"{path}:{i}: expected '<stem> train|validation|test'")
        overrides[parts[0]] = parts[1]
    return overrides


def write_dataset(root: str | Path, frames: Iterable[AnnotatedFrame]) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    for fr in frames:
        save_image(root / "images" / f"{fr.source_id}.png", fr.image)
        (root / "labels" / f"{fr.source_id}.txt").write_text(
            format_annotation(int(fr.label), fr.box) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# splitting

def _largest_remainder(total: int, ratios: Sequence[float]) -> list[int]:
    quotas = [total * r for r in ratios]
    counts = [int(math.floor(q + 1e-9)) for q in quotas]
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[: total - sum(counts)]:
        counts[i] += 1
    return counts


def _allocate(class_sizes: Sequence[int], ratios: Sequence[float]) -> list[list[int]]:
    """Integer class x split table with exact row sums and global column targets."""
    targets = _largest_remainder(sum(class_sizes), ratios)
    quotas = [[n * r for r in ratios] for n in class_sizes]
    table = [[int(math.floor(q + 1e-9)) for q in row] for row in quotas]
    row_need = [n - sum(row) for n, row in zip(class_sizes, table)]
    col_need = [t - sum(table[c][s] for c in range(len(table))) for s, t in enumerate(targets)]
    cells = sorted(((quotas[c][s] - table[c][s], c, s)
                    for c in range(len(table)) for s in range(len(ratios))),
                   key=lambda t: (-t[0], t[1], t[2]))
    for _, c, s in cells:
        if row_need[c] > 0 and col_need[s] > 0:
            table[c][s] += 1
            row_need[c] -= 1
            col_need[s] -= 1
    for c in range(len(table)):
        for s in range(len(ratios)):
            while row_need[c] > 0 and col_need[s] > 0:
                table[c][s] += 1
                row_need[c] -= 1
                col_need[s] -= 1
    return table


def split_dataset(frames: Sequence[AnnotatedFrame],
                  ratios: Sequence[float] = DEFAULT_RATIOS,
                  seed: int = 0,
                  overrides: dict[str, str] | None = None) -> DatasetSplit:
    """Stratified, seeded train/validation/test split.

    Frames named in ``overrides`` go to their forced split; the rest are
    shuffled per class (classes visited in id order, one generator) and
    apportioned so that global split sizes follow the largest-remainder rule.
    """
    if not frames:
        raise DataError("cannot split an empty dataset")
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must be three nonnegative values summing to 1, got {ratios}")
    overrides = overrides or {}
    forced: dict[str, list[AnnotatedFrame]] = {s: [] for s in SPLIT_NAMES}
    by_class: dict[int, list[AnnotatedFrame]] = {}
    for fr in frames:
        target = overrides.get(fr.source_id)
        if target is not None:
            forced[target].append(fr)
        else:
            by_class.setdefault(int(fr.label), []).append(fr)

    rng = np.random.Generator(np.random.Philox(key=seed & 0xFFFFFFFFFFFFFFFF))
    classes = sorted(by_class)
    table = _allocate([len(by_class[c]) for c in classes], ratios)
    out: dict[str, list[AnnotatedFrame]] = {s: list(forced[s]) for s in SPLIT_NAMES}
    for row, c in zip(table, classes):
        members = by_class[c]
        perm = rng.permutation(len(members))
        start = 0
        for s, count in zip(SPLIT_NAMES, row):
            out[s].extend(members[i] for i in perm[start:start + count])
            start += count
    return DatasetSplit(tuple(out["train"]), tuple(out["validation"]), tuple(out["test"]),
                        seed=seed, ratios=ratios)  # type: ignore[arg-type]


def class_histogram(frames: Iterable[AnnotatedFrame]) -> dict[int, int]:
    counts = {int(c): 0 for c in BehaviorClass}
    for fr in frames:
        counts[int(fr.label)] += 1
    return counts


__all__ = [
    "AnnotatedFrame", "AnnotationError", "BehaviorClass", "BoundingBox", "CLEAN",
    "DataError", "DatasetSplit", "FULL_FRAME", "NUM_CLASSES", "Provenance", "RoiImage",
    "class_histogram", "crop_roi", "find_images", "format_annotation", "load_dataset",
    "load_image", "parse_annotation", "read_label_file", "save_image", "split_dataset",
    "write_dataset",
]
