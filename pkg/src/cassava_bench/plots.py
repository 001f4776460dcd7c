"""Matplotlib figures written next to the numeric reports.

Figures are a side channel: callers catch PlotBackendUnavailableError and carry on.
"""

from __future__ import annotations

import logging
import os
from pathlib import Path

import numpy as np

from .dataset import CASSAVA_REGISTRY, ClassDistribution, ClassRegistry, DatasetManifest
from .errors import PlotBackendUnavailableError
from .metrics import ConfusionMatrix

log = logging.getLogger(__name__)


def _pyplot():
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except Exception as exc:
        raise PlotBackendUnavailableError(f"matplotlib unavailable: {exc}") from exc
    return plt


def _finish(fig, path):
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, dpi=120, bbox_inches="tight")
    return fig


def plot_class_distribution(
    dist: ClassDistribution, registry: ClassRegistry = CASSAVA_REGISTRY, path=None
):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    bars = ax.bar(registry.codes, [100.0 * f for f in dist.fractions], color="tab:green")
    for bar, n in zip(bars, dist.counts):
        ax.annotate(f"{n}", (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                    ha="center", va="bottom", fontsize=8)
    ax.set_ylabel("share of samples (%)")
    ax.set_title(f"Class distribution (n = {dist.total})")
    fig.tight_layout()
    return _finish(fig, path)


def example_grid_ids(manifest: DatasetManifest, per_class: int = 4, seed: int = 0) -> list[list[str]]:
    """Random image ids, one row per class present in the manifest."""
    rng = np.random.default_rng(seed)
    labels = manifest.label_array()
    rows = []
    for c in range(len(manifest.registry)):
        members = np.flatnonzero(labels == c)
        if members.size == 0:
            continue
        pick = rng.choice(members, size=min(per_class, members.size), replace=False)
        rows.append([manifest.image_ids[i] for i in sorted(pick)])
    return rows


def plot_example_grid(manifest: DatasetManifest, per_class: int = 4, seed: int = 0, path=None):
    from PIL import Image

    plt = _pyplot()
    rows = example_grid_ids(manifest, per_class, seed)
    codes = [manifest.registry.code(manifest.labels[manifest.image_ids.index(r[0])]) for r in rows]
    fig, axes = plt.subplots(len(rows), per_class, figsize=(1.8 * per_class, 1.8 * len(rows)), squeeze=False)
    for r, (ids, code) in enumerate(zip(rows, codes)):
        for c in range(per_class):
            ax = axes[r][c]
            ax.set_xticks([])
            ax.set_yticks([])
            if c < len(ids):
                with Image.open(manifest.image_path(ids[c])) as im:
                    ax.imshow(np.asarray(im.convert("RGB")))
            if c == 0:
                ax.set_ylabel(code)
    fig.tight_layout()
    return _finish(fig, path)


def plot_confusion(cm: ConfusionMatrix, registry: ClassRegistry = CASSAVA_REGISTRY, path=None, title=None):
    plt = _pyplot()
    counts = cm.counts
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    im = ax.imshow(counts, cmap="Blues")
    fig.colorbar(im, ax=ax)
    ax.set_xticks(range(cm.n_classes), registry.codes, rotation=45)
    ax.set_yticks(range(cm.n_classes), registry.codes)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    thresh = counts.max() / 2 if counts.max() else 0
    for i in range(cm.n_classes):
        for j in range(cm.n_classes):
            ax.text(j, i, str(counts[i, j]), ha="center", va="center",
                    color="white" if counts[i, j] > thresh else "black", fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _finish(fig, path)


def emit_plots(
    plot_dir: str | os.PathLike,
    dist: ClassDistribution | None = None,
    manifest: DatasetManifest | None = None,
    cm: ConfusionMatrix | None = None,
    registry: ClassRegistry = CASSAVA_REGISTRY,
    title: str | None = None,
    seed: int = 0,
) -> list[Path]:
    """Write whichever figures the inputs allow; returns the files written."""
    try:
        plt = _pyplot()
    except PlotBackendUnavailableError as exc:
        log.warning("skipping plots: %s", exc)
        return []
    plot_dir = Path(plot_dir)
    written = []
    jobs = []
    if dist is not None:
        jobs.append(("class_distribution.png", lambda p: plot_class_distribution(dist, registry, p)))
    if manifest is not None and manifest.root is not None:
        jobs.append(("examples.png", lambda p: plot_example_grid(manifest, seed=seed, path=p)))
    if cm is not None:
        jobs.append(("confusion.png", lambda p: plot_confusion(cm, registry, p, title)))
    for name, job in jobs:
        try:
            fig = job(plot_dir / name)
            plt.close(fig)
            written.append(plot_dir / name)
        except Exception as exc:  # figures never sink a run
            log.warning("plot %s failed: %s", name, exc)
    return written
