"""Figures for training and ablation reports.

PNGs are written without a software/date stamp so that identical inputs give
byte-identical files.
"""

from __future__ import annotations

import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .geometry.io import atomic_write_bytes  # noqa: E402

PNG_METADATA = {"Software": None}


def _save(fig, path) -> Path:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=100, metadata=PNG_METADATA)
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())
    return Path(path)


def plot_convergence(curves: dict[str, tuple], path, title: str = "Held-out F during training") -> Path:
    """``curves`` maps a label to ``(iterations, mean_f, std_f)``."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, (its, mean, std) in curves.items():
        ax.plot(its, mean, marker="o", ms=3, label=label)
        ax.fill_between(its, np.asarray(mean) - std, np.asarray(mean) + std, alpha=0.15)
    ax.set_xlabel("iteration")
    ax.set_ylabel("F-measure (IoU 0.5)")
    ax.set_ylim(0, 1)
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7, loc="lower right")
    fig.tight_layout()
    return _save(fig, path)


def plot_split_bars(rows: list[dict], path, splits=("normal", "rotated", "inverse")) -> Path:
    """Grouped bars of seed-mean F per config and test split."""
    names = [r["config"] for r in rows]
    x = np.arange(len(names))
    width = 0.8 / len(splits)
    fig, ax = plt.subplots(figsize=(max(6, 1.1 * len(names)), 4.5))
    for i, split in enumerate(splits):
        ax.bar(x + (i - (len(splits) - 1) / 2) * width, [r[f"f_{split}"] for r in rows], width, label=split)
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=7)
    ax.set_ylabel("F-measure")
    ax.set_ylim(0, 1)
    ax.legend(fontsize=8)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_loss(losses, path, window: int = 25) -> Path:
    """Training loss per step with a moving average."""
    losses = np.asarray(losses, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(losses, lw=0.6, alpha=0.5, label="step")
    if len(losses) >= window:
        smooth = np.convolve(losses, np.ones(window) / window, mode="valid")
        ax.plot(np.arange(window - 1, len(losses)), smooth, lw=1.5, label=f"mean of {window}")
    ax.set_xlabel("iteration")
    ax.set_ylabel("total loss")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_scene(image, polygons, path, scores=None, truth=None) -> Path:
    """Image with predicted polygons (start point marked) and optional ground truth."""
    fig, ax = plt.subplots(figsize=(4, 4))
    h, w = image.shape
    ax.imshow(image, cmap="gray", extent=(0, w, h, 0), vmin=0, vmax=1)
    for poly in truth or []:
        p = np.asarray(poly)
        ax.plot(*np.vstack([p, p[:1]]).T, color="lime", lw=1)
    for i, poly in enumerate(polygons):
        p = np.asarray(poly)
        ax.plot(*np.vstack([p, p[:1]]).T, color="red", lw=1)
        ax.plot(*p[0], "o", color="yellow", ms=3)
        if scores is not None:
            ax.text(p[0][0], p[0][1], f"{scores[i]:.2f}", color="yellow", fontsize=6)
    ax.set_axis_off()
    fig.tight_layout()
    return _save(fig, path)
