"""Static SVG figures for reports: confusion heatmap, hypnogram and training curves.

Every figure is written with a fixed hash salt and no date metadata so the
bytes depend only on the data.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .config import STAGES  # noqa: E402

STYLE = {
    "svg.hashsalt": "sleepyco",
    "svg.fonttype": "none",
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "legend.frameon": False,
}


def figure(width: float = 5.0, height: Optional[float] = None, **kwargs):
    """New figure and axes under the report style; height defaults to the golden ratio."""
    if height is None:
        height = width * (np.sqrt(5.0) - 1.0) / 2.0
    with plt.rc_context(STYLE):
        return plt.subplots(figsize=(width, height), **kwargs)


def save(fig, path) -> Path:
    """Write ``fig`` as a byte-stable SVG and close it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context(STYLE):
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None}, bbox_inches="tight")
    plt.close(fig)
    return path


def save_confusion_heatmap(counts: np.ndarray, path, normalize: bool = True) -> Path:
    """Heatmap of a 5x5 confusion matrix, annotated with counts and row percentages."""
    counts = np.asarray(counts)
    rows = counts.sum(axis=1, keepdims=True)
    frac = np.divide(counts, rows, out=np.zeros(counts.shape), where=rows > 0)
    fig, ax = figure(4.2, 3.6)
    with plt.rc_context(STYLE):
        im = ax.imshow(frac if normalize else counts, cmap="Blues", vmin=0.0, vmax=1.0 if normalize else None)
        for i in range(counts.shape[0]):
            for j in range(counts.shape[1]):
                colour = "white" if frac[i, j] > 0.5 else "black"
                ax.text(j, i, f"{counts[i, j]}\n{100 * frac[i, j]:.1f}%", ha="center", va="center",
                        fontsize=7, color=colour)
        ax.set_xticks(range(len(STAGES)), STAGES)
        ax.set_yticks(range(len(STAGES)), STAGES)
        ax.set_xlabel("predicted stage")
        ax.set_ylabel("actual stage")
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    return save(fig, path)


def save_hypnogram(true: Sequence[int], pred: Sequence[int], path, title: str = "") -> Path:
    """Step plot of true and predicted stages over epochs (W on top, N3 at the bottom)."""
    # Conventional display order from top: W, REM, N1, N2, N3.
    level = {0: 4, 4: 3, 1: 2, 2: 1, 3: 0}
    true_y = [level[int(s)] for s in true]
    pred_y = [level[int(s)] for s in pred]
    x = np.arange(len(true_y))
    fig, ax = figure(7.0, 2.6)
    with plt.rc_context(STYLE):
        ax.step(x, true_y, where="post", color="black", linewidth=1.0, label="true")
        ax.step(x, pred_y, where="post", color="tab:red", linewidth=0.8, alpha=0.7, label="predicted")
        ax.set_yticks([4, 3, 2, 1, 0], ["W", "REM", "N1", "N2", "N3"])
        ax.set_xlabel("epoch (30 s)")
        ax.set_xlim(0, max(len(x) - 1, 1))
        if title:
            ax.set_title(title)
        ax.legend(loc="upper right", ncol=2)
    return save(fig, path)


def save_training_curves(log_rows: Sequence[dict], path) -> Path:
    """Loss per iteration for each split found in a training log."""
    fig, ax = figure(5.0)
    with plt.rc_context(STYLE):
        for split in sorted({r["split"] for r in log_rows}):
            pts = [(int(r["iteration"]), float(r["loss"])) for r in log_rows if r["split"] == split]
            if pts:
                xs, ys = zip(*pts)
                ax.plot(xs, ys, marker="o" if split != "train" else None, markersize=3, label=split)
        ax.set_xlabel("iteration")
        ax.set_ylabel("loss")
        ax.legend()
    return save(fig, path)
