"""Matplotlib figures written next to the CSV/text reports.

Figures are built on the object API with an Agg canvas, so rendering is safe
from worker threads and never needs a display.
"""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .metrics import Histogram
from .tensor import ImageF

CHANNEL_COLORS = ("tab:red", "tab:green", "tab:blue")

_STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
}


def _new_figure(width: float = 6.4, height: float | None = None, ncols: int = 1):
    import matplotlib

    golden = (np.sqrt(5.0) - 1.0) / 2.0
    height = height or width * golden
    with matplotlib.rc_context(_STYLE):
        fig = Figure(figsize=(width, height), dpi=100)
        FigureCanvasAgg(fig)
        axes = fig.subplots(1, ncols, squeeze=False)[0]
    return fig, axes


def _save(fig: Figure, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, format="png", metadata={"Software": None})
    return path


def plot_image_histograms(
    original: Histogram,
    augmented: Histogram,
    path: str | Path,
    title: str = "",
) -> Path:
    """Per-channel frequency curves, original solid and augmented dashed."""
    fig, (ax,) = _new_figure()
    centers = original.bin_centers
    for c in range(original.counts.shape[0]):
        color = CHANNEL_COLORS[c % 3]
        ax.plot(centers, original.frequencies[c], color=color, lw=1.0, label=f"c{c} original")
        ax.plot(augmented.bin_centers, augmented.frequencies[c], color=color, lw=1.0, ls="--",
                label=f"c{c} augmented")
    ax.set_xlabel("intensity")
    ax.set_ylabel("frequency")
    ax.set_xlim(original.lo, original.hi)
    if title:
        ax.set_title(title)
    ax.legend(ncol=2, frameon=False)
    fig.tight_layout()
    return _save(fig, path)


def plot_feature_histograms(
    hists: Sequence[Histogram],
    labels: Sequence[str],
    path: str | Path,
    title: str = "",
) -> Path:
    fig, (ax,) = _new_figure()
    for i, (h, label) in enumerate(zip(hists, labels)):
        ax.plot(h.bin_centers, h.frequencies[0], lw=1.0, color=f"C{i}", label=label)
    ax.set_xlabel("channel-averaged feature value")
    ax.set_ylabel("frequency")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    return _save(fig, path)


def plot_error_map(err_img: ImageF, epe: float, path: str | Path, title: str = "") -> Path:
    """Error map with the EPE value in the upper right corner."""
    h, w = err_img.height, err_img.width
    fig, (ax,) = _new_figure(width=6.4, height=6.4 * h / w + 0.4)
    ax.imshow(np.clip(err_img.data, 0.0, 1.0), interpolation="nearest")
    ax.text(0.98, 0.97, f"EPE {epe:.3f}", transform=ax.transAxes, ha="right", va="top",
            color="white", fontsize=10, bbox={"facecolor": "black", "alpha": 0.6, "lw": 0})
    ax.set_axis_off()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_d1_comparison(
    names: Sequence[str],
    d1_original: Sequence[float],
    d1_augmented: Sequence[float],
    path: str | Path,
    threshold: float,
) -> Path:
    fig, (ax,) = _new_figure()
    x = np.arange(len(names))
    ax.bar(x - 0.2, np.asarray(d1_original) * 100, width=0.4, label="original", color="C0")
    ax.bar(x + 0.2, np.asarray(d1_augmented) * 100, width=0.4, label="augmented", color="C1")
    ax.set_xticks(x, names, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel(f"D1({threshold:g}px) [%]")
    ax.legend(frameon=False)
    fig.tight_layout()
    return _save(fig, path)
