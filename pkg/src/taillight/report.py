"""Figures written next to the text reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import RATE_NAMES, MetricsReport  # noqa: E402

# fixed metadata keeps the PNG bytes reproducible between runs
_PNG_META = {"Software": None}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def confusion_figure(report: MetricsReport, path: str | Path, title: str = "") -> Path:
    cm = report.cm
    fig, ax = plt.subplots(figsize=(5.2, 4.6))
    ax.imshow(cm.counts, cmap="Blues")
    ticks = np.arange(cm.k)
    ax.set_xticks(ticks, cm.class_names, rotation=30, ha="right")
    ax.set_yticks(ticks, cm.class_names)
    ax.set_xlabel("actual")
    ax.set_ylabel("predicted")
    top = cm.counts.max()
    for p in range(cm.k):
        for a in range(cm.k):
            v = cm.counts[p, a]
            ax.text(a, p, str(v), ha="center", va="center",
                    color="white" if v > top / 2 else "black", fontsize=9)
    ax.set_title(title or f"confusion, accuracy {report.overall.accuracy:.2%}")
    fig.tight_layout()
    return _save(fig, Path(path))


def metrics_figure(report: MetricsReport, path: str | Path, title: str = "") -> Path:
    names = list(report.cm.class_names) + ["overall"]
    rates = [report.per_class[n].as_tuple() for n in report.cm.class_names]
    o = report.overall
    rates.append(tuple(getattr(o, n) for n in RATE_NAMES))
    rates = np.array(rates) * 100.0
    fig, ax = plt.subplots(figsize=(7.0, 3.8))
    width = 0.8 / len(RATE_NAMES)
    x = np.arange(len(names))
    for j, metric in enumerate(RATE_NAMES):
        ax.bar(x + (j - 2) * width, rates[:, j], width, label=metric)
    ax.set_xticks(x, names)
    ax.set_ylabel("%")
    ax.set_ylim(0, 100)
    ax.legend(ncol=len(RATE_NAMES), fontsize=7, loc="lower center")
    ax.set_title(title or f"per-class metrics, kappa {o.kappa:.3f}")
    fig.tight_layout()
    return _save(fig, Path(path))


def drop_figure(drops: dict[str, dict[str, float]], path: str | Path) -> Path:
    """Bars of clean-minus-shifted drops (percentage points) per condition."""
    conds = list(drops)
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    width = 0.8 / max(1, len(conds))
    x = np.arange(len(RATE_NAMES))
    for j, cond in enumerate(conds):
        ax.bar(x + (j - (len(conds) - 1) / 2) * width,
               [drops[cond][n] for n in RATE_NAMES], width, label=cond)
    ax.set_xticks(x, RATE_NAMES)
    ax.set_ylabel("drop (pp)")
    ax.axhline(0, color="black", linewidth=0.6)
    ax.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, Path(path))


def write_figures(report: MetricsReport, out_dir: str | Path, prefix: str = "") -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return [confusion_figure(report, out / f"{prefix}confusion.png"),
            metrics_figure(report, out / f"{prefix}metrics.png")]
