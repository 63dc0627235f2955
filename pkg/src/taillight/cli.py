"""Command-line front end: ``taillight <subcommand> ...``.

Exit status: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import attention, corruption, feature_net, metrics, night, pca, pipeline, report, svm
from .dataset_io import (FULL_FRAME, AnnotationError, BehaviorClass, BoundingBox, DataError,
                         class_histogram, crop_roi, load_dataset, load_image, read_label_file,
                         save_image, split_dataset, write_dataset)
from .toy import ToyRoiSpec, generate_toy_dataset


def _ratios(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def _images(path: Path) -> list[Path]:
    if path.is_dir():
        return sorted(p for p in path.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    if not path.exists():
        raise DataError(f"no such file: {path}")
    return [path]


def _read_labels(path: Path) -> dict[str, int]:
    out = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            sid, label = line.split("\t")
            out[sid] = int(label)
    return out


# --------------------------------------------------------------------------
# subcommands

def cmd_ingest(args) -> int:
    frames, overrides = load_dataset(args.data)
    split = split_dataset(frames, args.ratios, args.seed, overrides)
    lines = []
    for name, part in split.parts().items():
        hist = class_histogram(part)
        print(f"{name}: {len(part)} " + " ".join(f"{BehaviorClass(c).label}={n}" for c, n in hist.items()))
        lines += [f"{fr.source_id} {name}" for fr in sorted(part, key=lambda f: f.source_id)]
    if args.write_splits:
        Path(args.write_splits).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


def cmd_toygen(args) -> int:
    frames = generate_toy_dataset(ToyRoiSpec(height=args.size, width=args.size), args.per_class, args.seed)
    write_dataset(args.output, frames)
    print(f"wrote {len(frames)} toy frames to {args.output}")
    return 0


def cmd_day2night(args) -> int:
    """Grade one image or a directory.

    The foreground is a ``<stem>.poly`` polygon file from ``--masks`` when present,
    else the box from ``--labels`` or ``--box``, else the whole frame.
    """
    params = night.load_params_file(args.params) if args.params else night.default_night_params()
    src = Path(args.input)
    out = Path(args.output)
    for path in _images(src):
        image = load_image(path)
        h, w = image.shape[:2]
        poly = Path(args.masks) / f"{path.stem}.poly" if args.masks else None
        label = Path(args.labels) / f"{path.stem}.txt" if args.labels else None
        if poly is not None and poly.exists():
            mask = night.mask_from_polygons(night.load_polygon_file(poly), (h, w))
        else:
            if label is not None and label.exists():
                _, box = read_label_file(label, w, h)
            elif args.box:
                box = BoundingBox(*args.box)
            else:
                box = FULL_FRAME
            mask = night.mask_from_box(box, (h, w))
        graded = night.day_to_night(image, mask, params)
        save_image(out / f"{path.stem}.png" if src.is_dir() else out, graded)
    return 0


def cmd_corrupt(args) -> int:
    kinds = corruption.resolve_kinds(args.kinds)
    severities = corruption.resolve_severities(args.severities)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for path in _images(Path(args.input)):
        image = load_image(path)
        for kind in kinds:
            for sev in severities:
                spec = corruption.CorruptionSpec(kind, sev, args.seed)
                roi = corruption.apply_corruption(image, spec)
                save_image(out / corruption.provenance_filename(path.stem, spec), roi.image)
    return 0


def cmd_conspicuity(args) -> int:
    """Write ``<stem>.png`` (merged) and ``<stem>.map.png`` (grayscale map) per input."""
    out = Path(args.output)
    for path in _images(Path(args.input)):
        image = load_image(path)
        cmap = attention.conspicuity_map(image, bins=args.bins)
        save_image(out / f"{path.stem}.png", attention.merge_with_raw(image, cmap, args.alpha))
        gray = np.floor(cmap * 255.0 + 0.5).astype(np.uint8)
        save_image(out / f"{path.stem}.map.png", np.repeat(gray[..., None], 3, axis=2))
    return 0


def cmd_maskfuse(args) -> int:
    geom = attention.load_geometry_file(args.geometry) if args.geometry else attention.MaskGeometry()
    omega, omega_prime, w_high = args.weights
    src = Path(args.input)
    for path in _images(src):
        roi = load_image(path)
        mask = attention.build_weighted_mask(roi.shape[1], roi.shape[0], geom,
                                             omega, omega_prime, w_high)
        save_image(Path(args.output) / f"{path.stem}.png" if src.is_dir() else args.output,
                   attention.fuse_mask(roi, mask))
        rest, trans, high = mask.tier_counts()
        print(f"{path.name}: rest={rest} transition={trans} high={high}")
    return 0


def cmd_extract(args) -> int:
    """Features of every ROI in a dataset root, or of every image in a plain directory."""
    root = Path(args.data)
    if (root / "images").is_dir():
        frames, _ = load_dataset(root)
        rois = [crop_roi(f).image for f in frames]
        ids = [f.source_id for f in frames]
    else:
        frames = []
        paths = _images(root)
        rois = [load_image(p) for p in paths]
        ids = [p.stem for p in paths]
    X = feature_net.extract_features(rois, args.weights, args.tap, args.batch_size)
    pca.save_matrix(args.output, X, ids)
    print(f"{len(ids)} x {X.shape[1]} features -> {args.output}")
    if frames:
        labels = Path(str(args.output) + ".labels")
        labels.write_text("".join(f"{f.source_id}\t{int(f.label)}\n" for f in frames),
                          encoding="utf-8")
        print(f"labels -> {labels}")
    return 0


def cmd_fit_pca(args) -> int:
    X, _ = pca.load_matrix(args.features)
    model = pca.fit(X, args.k)
    pca.save_model(args.output, model)
    ratio = pca.explained_variance_ratio(model)
    print(f"k={model.k} d={model.d} explained variance={ratio.sum():.6f}")
    return 0


def _projected(features_path, pca_path):
    X, ids = pca.load_matrix(features_path)
    if pca_path:
        X = pca.transform(pca.load_model(pca_path), X)
    return X, ids


def cmd_fit_svm(args) -> int:
    Z, ids = _projected(args.features, args.pca)
    labels = _read_labels(Path(args.labels))
    y = np.array([labels[i] for i in ids])
    model = svm.fit(Z, y, c=args.c, epochs=args.epochs, seed=args.seed,
                    margin_scale=args.margin_scale)
    svm.save_model(args.output, model)
    print(f"objective={svm.objective(model, Z, y):.6f} "
          f"train_accuracy={np.mean(svm.predict(model, Z) == y):.6f}")
    return 0


def cmd_predict(args) -> int:
    Z, ids = _projected(args.features, args.pca)
    preds = svm.predict(svm.load_model(args.svm), Z)
    lines = ["id,prediction"] + [f"{i},{BehaviorClass(int(p)).label}" for i, p in zip(ids, preds)]
    text = "\n".join(lines) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_eval(args) -> int:
    if args.matrix:
        cm = metrics.parse_matrix_text(Path(args.matrix).read_text(encoding="utf-8"))
    else:
        labels = _read_labels(Path(args.labels))
        names = {c.label: int(c) for c in BehaviorClass}
        preds, actual = [], []
        for line in Path(args.predictions).read_text(encoding="utf-8").splitlines()[1:]:
            if line.strip():
                sid, pred = line.split(",")[:2]
                preds.append(names[pred])
                actual.append(labels[sid])
        cm = metrics.confusion_matrix(preds, actual)
    rep = metrics.overall_report(cm)
    sys.stdout.write(metrics.format_report_csv(rep) if args.csv else metrics.format_report(rep))
    if args.figures:
        for p in report.write_figures(rep, args.figures):
            print(f"figure: {p}", file=sys.stderr)
    return 0


def cmd_run(args) -> int:
    overrides = list(args.set or [])
    if args.output:
        overrides.append(f"output.dir={args.output}")
    config = pipeline.load_config(args.config, overrides)
    if args.print_config:
        sys.stdout.write(pipeline.format_config(config))
        return 0
    man, rep = pipeline.run_pipeline(config)
    sys.stdout.write(metrics.format_report(rep))
    print(f"selected_c: {man.selected_c:g}")
    print("timings: " + " ".join(f"{k}={v:.2f}s" for k, v in man.timings.items()))
    return 0


def cmd_ablate(args) -> int:
    config = pipeline.load_config(args.config, list(args.set or []))
    out = args.output or config.output
    res = pipeline.ablate(config, args.axis, out)
    print(f"axis: {args.axis}")
    print(f"base.accuracy: {res.base.overall.accuracy:.6f}")
    print(f"ablated.accuracy: {res.ablated.overall.accuracy:.6f}")
    sys.stdout.write(metrics.format_drop(res.drop))
    return 0


def cmd_shift_eval(args) -> int:
    rep = pipeline.evaluate_domain_shift(args.model_dir, args.data, args.output)
    sys.stdout.write(metrics.format_report(rep))
    return 0


# --------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="taillight",
                                description="Taillight behavior classification toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="validate a dataset and show its stratified split")
    s.add_argument("--data", required=True)
    s.add_argument("--ratios", type=_ratios, default=(0.60, 0.15, 0.25))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--write-splits", metavar="FILE", help="write '<stem> <split>' lines")
    s.set_defaults(fn=cmd_ingest)

    s = sub.add_parser("toygen", help="write the synthetic toy ROI dataset")
    s.add_argument("--output", "--out", dest="output", required=True)
    s.add_argument("--per-class", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", type=int, default=64)
    s.set_defaults(fn=cmd_toygen)

    s = sub.add_parser("day2night", help="grade a daytime image to night")
    s.add_argument("--input", required=True)
    s.add_argument("--output", "--out", dest="output", required=True)
    s.add_argument("--labels", help="directory of YOLO label files giving the foreground box")
    s.add_argument("--box", type=float, nargs=4, metavar=("CX", "CY", "W", "H"),
                   help="normalized foreground box; default whole frame")
    s.add_argument("--masks", help="directory of <stem>.poly foreground polygon files")
    s.add_argument("--params", help="override file with foreground./background. lines")
    s.set_defaults(fn=cmd_day2night)

    s = sub.add_parser("corrupt", help="apply corruptions to an image or directory")
    s.add_argument("--input", required=True)
    s.add_argument("--output", "--out", dest="output", required=True)
    s.add_argument("--kinds", default="all", help="train, test, all or a comma list")
    s.add_argument("--severity", "--severities", dest="severities", default="all",
                   help="mild, moderate, severe, a comma list or all")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_corrupt)

    s = sub.add_parser("conspicuity", help="blend the rarity conspicuity map into an image")
    s.add_argument("--input", required=True)
    s.add_argument("--output", "--out", dest="output", required=True)
    s.add_argument("--alpha", type=float, default=0.3)
    s.add_argument("--bins", type=int, default=attention.DEFAULT_BINS)
    s.set_defaults(fn=cmd_conspicuity)

    s = sub.add_parser("maskfuse", help="multiply the tiered weight mask into an ROI")
    s.add_argument("--input", required=True)
    s.add_argument("--output", "--out", dest="output", required=True)
    s.add_argument("--geometry")
    s.add_argument("--weights", type=_ratios,
                   default=(attention.OMEGA, attention.OMEGA_PRIME, attention.W_HIGH),
                   metavar="OMEGA,OMEGA_PRIME,W_HIGH")
    s.set_defaults(fn=cmd_maskfuse)

    s = sub.add_parser("extract", help="FC features of every ROI in a dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--output", "--out", dest="output", required=True)
    s.add_argument("--weights", default="random:0")
    s.add_argument("--tap", choices=feature_net.TAPS, default="fc1")
    s.add_argument("--batch-size", type=int, default=8)
    s.set_defaults(fn=cmd_extract)

    s = sub.add_parser("fit-pca", help="fit PCA on a feature matrix")
    s.add_argument("--features", required=True)
    s.add_argument("--k", type=int, default=250)
    s.add_argument("--output", "--out", dest="output", required=True)
    s.set_defaults(fn=cmd_fit_pca)

    s = sub.add_parser("fit-svm", help="fit the multiclass SVM")
    s.add_argument("--features", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--pca")
    s.add_argument("--c", type=float, default=1.0)
    s.add_argument("--epochs", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--margin-scale", type=float, default=svm.DEFAULT_MARGIN)
    s.add_argument("--output", "--out", dest="output", required=True)
    s.set_defaults(fn=cmd_fit_svm)

    s = sub.add_parser("predict", help="predict classes for a feature matrix")
    s.add_argument("--features", required=True)
    s.add_argument("--svm", required=True)
    s.add_argument("--pca")
    s.add_argument("--output", "--out", dest="output")
    s.set_defaults(fn=cmd_predict)

    s = sub.add_parser("eval", help="metrics report from predictions or a confusion matrix")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--predictions", help="CSV from predict (needs --labels)")
    src.add_argument("--matrix", help="text confusion matrix, rows predicted")
    s.add_argument("--labels")
    s.add_argument("--csv", action="store_true", help="comma-separated output")
    s.add_argument("--figures", metavar="DIR", help="write PNG figures here")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("run", help="run the whole pipeline from a config file")
    s.add_argument("--config")
    s.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    s.add_argument("--output", "--out", dest="output")
    s.add_argument("--print-config", action="store_true")
    s.set_defaults(fn=cmd_run)

    s = sub.add_parser("ablate", help="base vs ablated run and the metric drop")
    s.add_argument("--config")
    s.add_argument("--axis", choices=pipeline.ABLATION_AXES, required=True)
    s.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    s.add_argument("--output", "--out", dest="output")
    s.set_defaults(fn=cmd_ablate)

    s = sub.add_parser("shift-eval", help="evaluate saved models on an external dataset")
    s.add_argument("--model-dir", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--output", "--out", dest="output")
    s.set_defaults(fn=cmd_shift_eval)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "eval" and args.predictions and not args.labels:
        print("error: --predictions needs --labels", file=sys.stderr)
        return pipeline.EXIT_CONFIG
    try:
        return args.fn(args)
    except pipeline.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except pipeline.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return pipeline.EXIT_CONFIG
    except (DataError, AnnotationError, OSError, KeyError, pca.FormatError,
            feature_net.WeightFileError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return pipeline.EXIT_DATA
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return pipeline.EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return pipeline.EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
