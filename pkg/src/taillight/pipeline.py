"""End-to-end orchestration: config, stage wiring, persistence, domain-shift evaluation.

Stage order::

    ingest -> split -> night / corruption augmentation (train only)
           -> conspicuity merge -> ROI crop -> mask fusion -> features
           -> PCA (fit on train) -> SVM (c chosen on validation) -> test report

Augmented images are added next to their originals.  Every image stage maps
frames through a bounded thread pool and gathers results by input index, so
output order never depends on scheduling.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import attention, corruption, feature_net, metrics, night, pca, report, svm
from .dataset_io import (AnnotatedFrame, AnnotationError, BehaviorClass, DataError,
                         DatasetSplit, Provenance, crop_roi, load_dataset, split_dataset)
from .corruption import TRAIN_KINDS
from .imaging import philox
from .toy import ToyRoiSpec, generate_toy_dataset

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
ABLATION_AXES = ("corruption_off", "tap_fc2", "pca_off")
MODEL_FILES = ("pca.tlpc", "svm.tlsv")
REPORT_FILES = ("report.txt", "report.csv", "predictions.csv")


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    """A stage failed; carries the stage name and the process exit status."""

    def __init__(self, stage: str, code: int, message: str):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage
        self.code = code


# --------------------------------------------------------------------------
# configuration

def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class PipelineConfig:
    # [data]
    dataset: str = "toy"                 # dataset root, or "toy" for the generator
    toy_per_class: int = 200
    toy_seed: int = 0
    ratios: tuple[float, ...] = (0.60, 0.15, 0.25)
    split_seed: int = 0
    # [night]
    night: bool = False
    night_params: str = ""               # override file, empty = built-in grading
    # [corruption]
    corruption: bool = False
    corruption_kinds: tuple[str, ...] = TRAIN_KINDS
    corruption_severities: tuple[str, ...] = ("mild", "moderate", "severe")
    corruption_seed: int = 0
    corruption_copies: int = 1
    test_corruption_kinds: tuple[str, ...] = ()   # corrupt the test split for robustness runs
    # [attention]
    conspicuity: bool = False
    conspicuity_alpha: float = 0.3
    mask: bool = False
    mask_geometry: str = ""
    omega: float = attention.OMEGA
    omega_prime: float = attention.OMEGA_PRIME
    w_high: float = attention.W_HIGH
    # [features]
    weights: str = "random:0"
    tap: str = "fc1"
    batch_size: int = 8
    # [pca]
    pca: bool = True
    pca_k: int = 250
    pca_fit_on: str = "train"            # "all" also fits on validation and test features
    # [svm]
    svm_c_grid: tuple[float, ...] = (0.1, 1.0, 10.0)
    svm_epochs: int = 50
    svm_seed: int = 0
    margin_scale: float = svm.DEFAULT_MARGIN
    svm_bias: bool = False
    # [output]
    output: str = "taillight-run"
    figures: bool = True

    def validate(self) -> "PipelineConfig":
        if self.tap not in feature_net.TAPS:
            raise ConfigError(f"features.tap must be one of {feature_net.TAPS}, got {self.tap!r}")
        if len(self.ratios) != 3 or any(r < 0 for r in self.ratios) or abs(sum(self.ratios) - 1) > 1e-9:
            raise ConfigError(f"data.ratios must be three nonnegative values summing to 1: {self.ratios}")
        if self.dataset != "toy" and not Path(self.dataset).is_dir():
            raise ConfigError(f"data.dataset: no such directory {self.dataset!r}")
        if self.toy_per_class < 1:
            raise ConfigError("data.toy_per_class must be at least 1")
        for path_key in ("night_params", "mask_geometry"):
            p = getattr(self, path_key)
            if p and not Path(p).is_file():
                raise ConfigError(f"{path_key}: no such file {p!r}")
        if not self.weights.startswith("random:") and not Path(self.weights).is_file():
            raise ConfigError(f"features.weights: no such file {self.weights!r}")
        train_kinds = {k.name for k in corruption.corruption_partition("train")}
        test_kinds = {k.name for k in corruption.corruption_partition("test")}
        for kind in self.corruption_kinds:
            if kind not in corruption.ALL_KINDS:
                raise ConfigError(f"unknown corruption kind {kind!r}")
            if kind not in train_kinds:
                raise ConfigError(f"corruption kind {kind!r} belongs to the test partition and "
                                  "cannot be used for training")
        for kind in self.test_corruption_kinds:
            if kind not in test_kinds:
                raise ConfigError(f"test corruption kind {kind!r} is not in the test partition")
        if self.corruption and not self.corruption_kinds:
            raise ConfigError("corruption enabled with an empty kind list")
        try:
            for s in self.corruption_severities:
                corruption.Severity.parse(s)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.corruption_copies < 1 or self.batch_size < 1 or self.svm_epochs < 1:
            raise ConfigError("corruption_copies, batch_size and svm epochs must be positive")
        if self.pca_k < 1:
            raise ConfigError("pca.k must be positive")
        if self.pca_fit_on not in ("train", "all"):
            raise ConfigError(f"pca.fit_on must be 'train' or 'all', got {self.pca_fit_on!r}")
        if not self.svm_c_grid or any(c <= 0 for c in self.svm_c_grid):
            raise ConfigError("svm.c_grid needs at least one positive value")
        if not 0.0 <= self.conspicuity_alpha <= 1.0:
            raise ConfigError("attention.conspicuity_alpha must lie in [0, 1]")
        if not self.omega < self.omega_prime < self.w_high:
            raise ConfigError("attention weights must satisfy omega < omega_prime < w_high")
        return self


# (section, key, field, parser, help)
_SCHEMA: tuple[tuple[str, str, str, Callable[[str], object], str], ...] = (
    ("data", "dataset", "dataset", str, "dataset root (images/ + labels/) or 'toy'"),
    ("data", "toy_per_class", "toy_per_class", int, "toy samples per class"),
    ("data", "toy_seed", "toy_seed", int, "toy generator seed"),
    ("data", "ratios", "ratios", _floats, "train, validation, test fractions"),
    ("data", "split_seed", "split_seed", int, "stratified split seed"),
    ("night", "enabled", "night", _bool, "add a night-graded copy of each training image"),
    ("night", "params", "night_params", str, "grading override file; empty = defaults"),
    ("corruption", "enabled", "corruption", _bool, "add corrupted copies of training images"),
    ("corruption", "kinds", "corruption_kinds", corruption.resolve_kinds,
     "training kinds: 'train' or a comma list from the train partition"),
    ("corruption", "severities", "corruption_severities",
     lambda s: tuple(v.label for v in corruption.resolve_severities(s)), "mild,moderate,severe"),
    ("corruption", "seed", "corruption_seed", int, "corruption seed"),
    ("corruption", "copies", "corruption_copies", int, "corrupted copies per training image"),
    ("corruption", "test_kinds", "test_corruption_kinds",
     lambda s: corruption.resolve_kinds(s) if s.strip() else (),
     "test-partition kinds applied to the test split; empty = clean test"),
    ("attention", "conspicuity", "conspicuity", _bool, "blend the conspicuity map into frames"),
    ("attention", "alpha", "conspicuity_alpha", float, "conspicuity blend weight"),
    ("attention", "mask", "mask", _bool, "multiply the tiered weight mask into ROIs"),
    ("attention", "geometry", "mask_geometry", str, "mask geometry file; empty = defaults"),
    ("attention", "omega", "omega", float, "rest-tier weight"),
    ("attention", "omega_prime", "omega_prime", float, "transition-tier weight"),
    ("attention", "w_high", "w_high", float, "taillight-tier weight"),
    ("features", "weights", "weights", str, "'random:SEED' or a TLWT weight file"),
    ("features", "tap", "tap", str, "fc1 or fc2"),
    ("features", "batch_size", "batch_size", int, "forward-pass batch size"),
    ("pca", "enabled", "pca", _bool, "reduce features with PCA"),
    ("pca", "k", "pca_k", int, "retained components"),
    ("pca", "fit_on", "pca_fit_on", str, "train (default) or all splits"),
    ("svm", "c_grid", "svm_c_grid", _floats, "candidate c values, chosen on validation"),
    ("svm", "epochs", "svm_epochs", int, "solver epochs"),
    ("svm", "seed", "svm_seed", int, "solver shuffle seed"),
    ("svm", "margin_scale", "margin_scale", float, "label-loss margin"),
    ("svm", "bias", "svm_bias", _bool, "append a constant-1 feature as a bias term"),
    ("output", "dir", "output", str, "output directory"),
    ("output", "figures", "figures", _bool, "render PNG figures next to the reports"),
)


def load_config(path: str | Path | None = None, overrides: Sequence[str] = ()) -> PipelineConfig:
    """Read an INI-style file (``[section]`` + ``key = value``); unknown keys are errors.

    ``overrides`` are ``section.key=value`` strings applied after the file.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, name, value.strip())
    table = {(s, k): (f, conv) for s, k, f, conv, _ in _SCHEMA}
    values = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            if (section, key) not in table:
                raise ConfigError(f"unknown config key [{section}] {key}")
            name, conv = table[(section, key)]
            try:
                values[name] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from None
    return PipelineConfig(**values).validate()


def format_config(config: PipelineConfig) -> str:
    out = io.StringIO()
    section = None
    for sec, key, name, _, doc in _SCHEMA:
        if sec != section:
            out.write(("\n" if section else "") + f"[{sec}]\n")
            section = sec
        out.write(f"# {doc}\n{key} = {_fmt(getattr(config, name))}\n")
    return out.getvalue()


# --------------------------------------------------------------------------
# manifest

def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    config: dict
    timings: dict[str, float] = field(default_factory=dict)
    digests: dict[str, str] = field(default_factory=dict)
    metrics: dict[str, float] = field(default_factory=dict)
    selected_c: float | None = None
    counts: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, verify: bool = True) -> "RunManifest":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        man = cls(**data)
        if verify:
            man.verify(Path(path).parent)
        return man

    def verify(self, directory: str | Path) -> None:
        for name, digest in self.digests.items():
            target = Path(directory) / name
            if not target.exists():
                raise DataError(f"manifest lists {name} but it is missing")
            if sha256_file(target) != digest:
                raise DataError(f"{name}: digest does not match the manifest (file modified?)")

    def pipeline_config(self) -> PipelineConfig:
        cfg = dict(self.config)
        for f in fields(PipelineConfig):
            if isinstance(f.default, tuple) and f.name in cfg:
                cfg[f.name] = tuple(cfg[f.name])
        return PipelineConfig(**cfg)


# --------------------------------------------------------------------------
# image stages

def worker_count() -> int:
    env = os.environ.get("TAILLIGHT_THREADS")
    if env:
        return max(1, int(env))
    return max(1, min(8, os.cpu_count() or 1))


def map_ordered(fn: Callable, items: Sequence, workers: int | None = None) -> list:
    """``[fn(x) for x in items]`` on a bounded pool; results are in input order."""
    workers = workers or worker_count()
    if workers == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def corruption_plan(config: PipelineConfig, index: int, copy: int,
                    kinds: Sequence[str] | None = None,
                    severities: Sequence[str] | None = None) -> corruption.CorruptionSpec:
    """Kind, severity and seed for one corrupted copy, drawn from its own Philox stream."""
    kinds = tuple(kinds if kinds is not None else config.corruption_kinds)
    severities = tuple(severities if severities is not None else config.corruption_severities)
    rng = philox(config.corruption_seed, (index << 16) | copy)
    kind = kinds[int(rng.integers(len(kinds)))]
    sev = severities[int(rng.integers(len(severities)))]
    seed = int(rng.integers(1 << 31))
    return corruption.CorruptionSpec(kind, corruption.Severity.parse(sev), seed)


def _night_params(config: PipelineConfig) -> night.NightParamPair:
    if config.night_params:
        return night.load_params_file(config.night_params)
    return night.default_night_params()


def night_copy(frame: AnnotatedFrame, params: night.NightParamPair) -> AnnotatedFrame:
    mask = night.mask_from_box(frame.box, frame.image.shape[:2])
    img = night.day_to_night(frame.image, mask, params)
    prov = Provenance(night=True, corruption=frame.provenance.corruption)
    return frame.with_image(img, prov, "night")


def corrupted_copy(frame: AnnotatedFrame, spec: corruption.CorruptionSpec) -> AnnotatedFrame:
    roi = corruption.apply_corruption(frame.image, spec, frame.provenance)
    return frame.with_image(roi.image, roi.provenance,
                            f"{spec.kind}__{spec.severity.label}__{spec.seed}")


def augment_training(frames: Sequence[AnnotatedFrame], config: PipelineConfig) -> list[AnnotatedFrame]:
    """Originals first, then night copies, then corrupted copies of all of those."""
    out = list(frames)
    if config.night:
        params = _night_params(config)
        out += map_ordered(lambda fr: night_copy(fr, params), list(frames))
    if config.corruption:
        jobs = [(i, j, fr) for i, fr in enumerate(list(out)) for j in range(config.corruption_copies)]
        out += map_ordered(lambda job: corrupted_copy(job[2], corruption_plan(config, job[0], job[1])),
                           jobs)
    return out


def corrupt_test(frames: Sequence[AnnotatedFrame], config: PipelineConfig) -> list[AnnotatedFrame]:
    if not config.test_corruption_kinds:
        return list(frames)
    severities = ("mild", "moderate", "severe")
    return map_ordered(
        lambda job: corrupted_copy(job[1], corruption_plan(
            replace(config, corruption_seed=config.corruption_seed ^ 0x7E57), job[0], 0,
            config.test_corruption_kinds, severities)),
        list(enumerate(frames)))


def assert_corruption_hygiene(frames: Iterable[AnnotatedFrame]) -> None:
    train_kinds = {k.name for k in corruption.corruption_partition("train")}
    for fr in frames:
        c = fr.provenance.corruption
        if c is not None and c[0] not in train_kinds:
            raise DataError(f"{fr.source_id}: test-partition corruption {c[0]!r} in training data")


class RoiPreprocessor:
    """Conspicuity merge, crop and mask fusion for one configuration."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.bank = attention.default_filter_bank()
        self.geometry = (attention.load_geometry_file(config.mask_geometry)
                         if config.mask_geometry else attention.MaskGeometry())
        self._masks: dict[tuple[int, int], attention.WeightedMask] = {}

    def mask_for(self, h: int, w: int) -> attention.WeightedMask:
        if (h, w) not in self._masks:
            c = self.config
            self._masks[(h, w)] = attention.build_weighted_mask(
                w, h, self.geometry, c.omega, c.omega_prime, c.w_high)
        return self._masks[(h, w)]

    def __call__(self, frame: AnnotatedFrame) -> np.ndarray:
        if self.config.conspicuity:
            cmap = attention.conspicuity_map(frame.image, self.bank)
            frame = frame.with_image(attention.merge_with_raw(
                frame.image, cmap, self.config.conspicuity_alpha), frame.provenance, "csp")
        roi = crop_roi(frame).image
        if self.config.mask:
            roi = attention.fuse_mask(roi, self.mask_for(*roi.shape[:2]))
        return roi

    def run(self, frames: Sequence[AnnotatedFrame]) -> list[np.ndarray]:
        # warm the mask cache serially so pool workers only read it
        if self.config.mask:
            for fr in frames:
                h, w = fr.image.shape[:2]
                x0, y0, x1, y1 = fr.box.to_pixels(w, h)
                self.mask_for(y1 - y0, x1 - x0)
        return map_ordered(self, list(frames))


class FeatureCache:
    """Both FC taps keyed by weights, batch size and a digest of the input ROIs."""

    def __init__(self):
        self._store: dict[tuple[str, int, str], tuple[np.ndarray, np.ndarray]] = {}

    def taps(self, rois: Sequence[np.ndarray], weights: str, batch_size: int):
        h = hashlib.sha256()
        for r in rois:
            h.update(repr(r.shape).encode())
            h.update(np.ascontiguousarray(r).tobytes())
        key = (weights, batch_size, h.hexdigest())
        if key not in self._store:
            self._store[key] = compute_taps(rois, weights, batch_size)
        return self._store[key]


def compute_taps(rois: Sequence[np.ndarray], weights: str, batch_size: int):
    spec, net = feature_net.resolve_weights(weights)
    d1, d2 = spec.fc[0], spec.fc[1]
    fc1 = np.empty((len(rois), d1))
    fc2 = np.empty((len(rois), d2))
    for start in range(0, len(rois), batch_size):
        chunk = np.stack([feature_net.resize_to_input(r).astype(np.float32)
                          for r in rois[start:start + batch_size]])
        a, b = feature_net.forward_batch(spec, net, chunk, batch_size)
        fc1[start:start + len(chunk)] = a
        fc2[start:start + len(chunk)] = b
    return fc1, fc2


def features(rois: Sequence[np.ndarray], config: PipelineConfig,
             cache: FeatureCache | None = None) -> np.ndarray:
    if not rois:
        return np.zeros((0, feature_net.FEATURE_DIM))
    if cache is not None:
        fc1, fc2 = cache.taps(rois, config.weights, config.batch_size)
    else:
        fc1, fc2 = compute_taps(rois, config.weights, config.batch_size)
    return _finite(fc1 if config.tap == "fc1" else fc2, "features")


# --------------------------------------------------------------------------
# running

def _load_frames(config: PipelineConfig) -> tuple[list[AnnotatedFrame], dict[str, str]]:
    if config.dataset == "toy":
        return generate_toy_dataset(ToyRoiSpec(), config.toy_per_class, config.toy_seed), {}
    return load_dataset(config.dataset)


class _Stages:
    """Runs named stages, timing each and mapping failures to exit codes."""

    def __init__(self):
        self.timings: dict[str, float] = {}

    def __call__(self, name: str, fn: Callable, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        except StageError:
            raise
        except ConfigError as exc:
            raise StageError(name, EXIT_CONFIG, str(exc)) from exc
        except (DataError, AnnotationError, OSError, corruption.UnknownCorruption) as exc:
            raise StageError(name, EXIT_DATA, str(exc)) from exc
        except (FloatingPointError, np.linalg.LinAlgError) as exc:
            raise StageError(name, EXIT_NUMERIC, str(exc)) from exc
        except ValueError as exc:
            raise StageError(name, EXIT_DATA, str(exc)) from exc
        finally:
            self.timings[name] = round(self.timings.get(name, 0.0) + time.perf_counter() - t0, 3)


def _finite(X: np.ndarray, what: str) -> np.ndarray:
    if not np.isfinite(X).all():
        raise FloatingPointError(f"non-finite values in {what}")
    return X


def _labels(frames: Sequence[AnnotatedFrame]) -> np.ndarray:
    return np.array([int(f.label) for f in frames], dtype=np.int64)


def _fit_pca(X: np.ndarray, config: PipelineConfig) -> pca.PcaModel:
    if not config.pca:
        return pca.identity_model(X.shape[1])
    limit = min(X.shape[0] - 1, X.shape[1])
    if config.pca_k > limit:
        raise ConfigError(f"pca.k={config.pca_k} exceeds min(n_train - 1, d) = {limit}")
    return pca.fit(X, config.pca_k)


def _select_svm(Z: np.ndarray, y: np.ndarray, Zv: np.ndarray | None, yv: np.ndarray | None,
                config: PipelineConfig) -> tuple[svm.SvmModel, dict[float, float]]:
    """Fit one model per c; keep the best validation accuracy (smallest c on ties)."""
    classes = tuple(int(c) for c in BehaviorClass)
    best, best_acc, scores = None, -1.0, {}
    for c in sorted(config.svm_c_grid):
        model = svm.fit(Z, y, c=c, epochs=config.svm_epochs, seed=config.svm_seed,
                        margin_scale=config.margin_scale, classes=classes)
        if Zv is None or len(Zv) == 0:
            return model, scores
        acc = float(np.mean(svm.predict(model, Zv) == yv))
        scores[c] = acc
        if acc > best_acc:
            best, best_acc = model, acc
    return best, scores


def _project(model: pca.PcaModel, X: np.ndarray, config: PipelineConfig) -> np.ndarray:
    Z = pca.transform(model, X) if config.pca else X
    if config.svm_bias:
        Z = svm.append_bias(Z)
    return _finite(Z, "projected features")


def write_reports(out: Path, rep: metrics.MetricsReport, ids: Sequence[str],
                  labels: np.ndarray, preds: np.ndarray, figures: bool) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(metrics.format_report(rep), encoding="utf-8")
    (out / "report.csv").write_text(metrics.format_report_csv(rep), encoding="utf-8")
    lines = ["id,label,prediction"] + [f"{i},{BehaviorClass(int(a)).label},{BehaviorClass(int(p)).label}"
                                       for i, a, p in zip(ids, labels, preds)]
    (out / "predictions.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return report.write_figures(rep, out) if figures else []


def run_pipeline(config: PipelineConfig, cache: FeatureCache | None = None,
                 write: bool = True) -> tuple[RunManifest, metrics.MetricsReport]:
    stage = _Stages()
    stage("validate", config.validate)
    feature_net.configure_threads()
    frames, overrides = stage("ingest", _load_frames, config)
    split: DatasetSplit = stage("split", split_dataset, frames, config.ratios,
                                config.split_seed, overrides)
    if not split.train or not split.test:
        raise StageError("split", EXIT_DATA, "train or test split is empty")
    train = stage("augment", augment_training, split.train, config)
    stage("augment", assert_corruption_hygiene, train)
    test = stage("augment", corrupt_test, split.test, config)
    pre = RoiPreprocessor(config)
    need_val = len(split.validation) > 0 and (len(config.svm_c_grid) > 1
                                              or (config.pca and config.pca_fit_on == "all"))
    rois_train = stage("attention", pre.run, train)
    rois_val = stage("attention", pre.run, split.validation) if need_val else []
    rois_test = stage("attention", pre.run, test)

    X = stage("features", features, rois_train, config, cache)
    Xv = stage("features", features, rois_val, config, cache) if need_val else None
    Xt = stage("features", features, rois_test, config, cache)
    y, yt = _labels(train), _labels(test)
    yv = _labels(split.validation) if need_val else None

    fit_rows = X if config.pca_fit_on == "train" else np.vstack([X] + ([Xv] if need_val else []) + [Xt])
    pmodel = stage("pca", _fit_pca, fit_rows, config)
    Z = stage("pca", _project, pmodel, X, config)
    Zv = stage("pca", _project, pmodel, Xv, config) if need_val else None
    Zt = stage("pca", _project, pmodel, Xt, config)
    smodel, val_scores = stage("svm", _select_svm, Z, y, Zv, yv, config)
    preds = stage("eval", svm.predict, smodel, Zt)
    rep = stage("eval", metrics.overall_report, metrics.confusion_matrix(preds, yt))

    man = RunManifest(config=asdict(config), selected_c=smodel.c,
                      metrics={n: getattr(rep.overall, n) for n in metrics.OVERALL_NAMES},
                      counts={"train": len(train), "validation": len(split.validation),
                              "test": len(test)})
    man.metrics.update({f"validation_accuracy@c={c:g}": v for c, v in val_scores.items()})
    if write:
        out = Path(config.output)
        out.mkdir(parents=True, exist_ok=True)
        stage("persist", pca.save_model, out / "pca.tlpc", pmodel)
        stage("persist", svm.save_model, out / "svm.tlsv", smodel)
        stage("report", write_reports, out, rep, [f.source_id for f in test], yt, preds,
              config.figures)
        man.digests = {n: sha256_file(out / n) for n in MODEL_FILES + REPORT_FILES}
    man.timings = dict(stage.timings)
    if write:
        man.save(Path(config.output) / "manifest.json")
    return man, rep


# --------------------------------------------------------------------------
# evaluation-only paths

def evaluate_domain_shift(model_dir: str | Path, dataset: str | Path,
                          out_dir: str | Path | None = None) -> metrics.MetricsReport:
    """Score an external dataset with persisted models; nothing is refit or rewritten."""
    model_dir = Path(model_dir)
    stage = _Stages()
    man = stage("load-models", RunManifest.load, model_dir / "manifest.json")
    config = stage("load-models", man.pipeline_config)
    pmodel = stage("load-models", pca.load_model, model_dir / "pca.tlpc")
    smodel = stage("load-models", svm.load_model, model_dir / "svm.tlsv")
    before = {n: sha256_file(model_dir / n) for n in MODEL_FILES}
    frames, _ = stage("ingest", load_dataset, dataset)
    unknown = sorted({int(f.label) for f in frames} - set(smodel.classes))
    if unknown:
        raise StageError("ingest", EXIT_DATA, f"labels {unknown} are not model classes")
    rois = stage("attention", RoiPreprocessor(config).run, frames)
    X = stage("features", features, rois, config)
    Z = stage("pca", _project, pmodel, X, config)
    preds = stage("eval", svm.predict, smodel, Z)
    labels = _labels(frames)
    rep = stage("eval", metrics.overall_report, metrics.confusion_matrix(preds, labels))
    if out_dir is not None:
        write_reports(Path(out_dir), rep, [f.source_id for f in frames], labels, preds,
                      config.figures)
    after = {n: sha256_file(model_dir / n) for n in MODEL_FILES}
    if before != after:
        raise StageError("eval", EXIT_DATA, "model files changed during evaluation")
    return rep


@dataclass
class AblationResult:
    axis: str
    base: metrics.MetricsReport
    ablated: metrics.MetricsReport
    drop: dict[str, float]


def ablated_config(config: PipelineConfig, axis: str) -> PipelineConfig:
    if axis == "corruption_off":
        return replace(config, corruption=False)
    if axis == "tap_fc2":
        return replace(config, tap="fc2")
    if axis == "pca_off":
        return replace(config, pca=False)
    raise ConfigError(f"ablation axis must be one of {ABLATION_AXES}, got {axis!r}")


def ablate(config: PipelineConfig, axis: str, out_dir: str | Path | None = None) -> AblationResult:
    """Base and ablated runs with shared seeds; the drop is base minus ablated."""
    variant = ablated_config(config, axis)
    cache = FeatureCache()
    base_dir = ab_dir = None
    if out_dir is not None:
        base_dir, ab_dir = Path(out_dir) / "base", Path(out_dir) / axis
    _, base = run_pipeline(replace(config, output=str(base_dir or config.output)), cache,
                           write=base_dir is not None)
    _, abl = run_pipeline(replace(variant, output=str(ab_dir or config.output)), cache,
                          write=ab_dir is not None)
    drop = metrics.robustness_drop(base, abl)
    if out_dir is not None:
        out = Path(out_dir)
        (out / "drop.txt").write_text(f"axis: {axis}\n" + metrics.format_drop(drop), encoding="utf-8")
        if config.figures:
            report.drop_figure({axis: drop}, out / "drop.png")
    return AblationResult(axis, base, abl, drop)
