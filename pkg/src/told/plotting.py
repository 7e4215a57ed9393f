"""Figure rendering for the CLI report paths.

Every CSV artifact the commands emit gets a PNG companion so runs are
reviewable at a glance. Figures are written through the Agg backend
with version metadata stripped, keeping seeded reruns byte-identical.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "save_density_map",
    "save_curves",
    "save_histogram_pair",
    "save_fid_summary",
]

_SAVE_KW = {"dpi": 110, "metadata": {"Software": None}}


def save_density_map(path, times, edges, counts, title):
    """Time-vs-position heatmap of per-frame histograms."""
    fig, ax = plt.subplots(figsize=(7.0, 3.2))
    ax.imshow(
        counts.T,
        origin="lower",
        aspect="auto",
        extent=(float(times[0]), float(times[-1]), float(edges[0]), float(edges[-1])),
        cmap="magma",
    )
    ax.set_xlabel("t")
    ax.set_ylabel("q")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_curves(path, x, series, xlabel, ylabel, title, logy=False):
    """Line plot of named series over a common x grid."""
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    for label, y in series.items():
        ax.plot(x, y, label=label, linewidth=1.4)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if len(series) > 1:
        ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_histogram_pair(path, a, b, labels, title, bins=80):
    """Overlaid density histograms of two scalar samples."""
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    lim = max(np.abs(a).max(), np.abs(b).max())
    grid = np.linspace(-lim, lim, bins + 1)
    ax.hist(a, bins=grid, density=True, alpha=0.55, label=labels[0])
    ax.hist(b, bins=grid, density=True, alpha=0.55, label=labels[1])
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_fid_summary(path, groups, title):
    """Strip plot of per-run metric values with group means, one column per label."""
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    for i, (label, values) in enumerate(groups.items()):
        vals = np.asarray(values, dtype=float)
        ax.plot(np.full(vals.shape, i), vals, "o", alpha=0.6, markersize=5)
        ax.hlines(vals.mean(), i - 0.2, i + 0.2, color="k", linewidth=2)
    ax.set_xticks(range(len(groups)), list(groups.keys()))
    ax.set_xlim(-0.6, len(groups) - 0.4)
    ax.set_ylabel("Gaussian-Frechet distance")
    ax.set_title(title)
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
