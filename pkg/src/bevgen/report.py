"""Delimited reports, lossless image output, and matplotlib figures.

Figures use the Agg backend and are written without timestamps so that
rerunning a command reproduces its artifacts byte for byte (wall-clock
measurement columns in benchmark CSVs are the documented exception).
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402
from PIL import Image  # noqa: E402

_SAVE_KW = {"dpi": 110, "metadata": {"Software": None, "Date": None}}


def write_csv(path, header, rows):
    """Write one delimited report; rows are sequences matching header."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def read_csv(path):
    """Read a report back: (header, list of string rows)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, list(reader)


def save_png(path, image):
    """Lossless 8-bit PNG from a float image in [0, 1] (H, W, 3) or (H, W)."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG")


def load_png(path):
    """PNG -> float64 image in [0, 1]."""
    return np.asarray(Image.open(path), dtype=np.float64) / 255.0


def contact_sheet(path, rows, row_titles=None, title=None):
    """Grid figure of images: ``rows`` is a list of lists of (H, W, 3)."""
    n_rows = len(rows)
    n_cols = max(len(r) for r in rows)
    fig, axes = plt.subplots(n_rows, n_cols,
                             figsize=(2.2 * n_cols, 1.4 * n_rows),
                             squeeze=False)
    for i, row in enumerate(rows):
        for j in range(n_cols):
            ax = axes[i][j]
            ax.set_axis_off()
            if j < len(row):
                ax.imshow(np.clip(row[j], 0.0, 1.0), interpolation="nearest")
        if row_titles:
            axes[i][0].set_title(row_titles[i], fontsize=8, loc="left")
    if title:
        fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def metric_bars(path, names, values, ylabel, title=None):
    fig, ax = plt.subplots(figsize=(1.2 + 0.9 * len(names), 3.2))
    ax.bar(range(len(names)), values, color="#4878cf")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def line_plot(path, x, series, xlabel, ylabel, title=None, logy=False):
    """``series`` maps label -> y values over the shared x axis."""
    fig, ax = plt.subplots(figsize=(4.8, 3.2))
    for label, ys in series.items():
        ax.plot(x, ys, marker="o", markersize=3, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if logy:
        ax.set_yscale("log")
    if len(series) > 1:
        ax.legend(fontsize=8)
    if title:
        ax.set_title(title, fontsize=10)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def training_curve(path, history, title=None):
    steps = [h["step"] for h in history]
    line_plot(path, steps, {"loss": [h["loss"] for h in history]},
              "step", "loss", title=title)


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
