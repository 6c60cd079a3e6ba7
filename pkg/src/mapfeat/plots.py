"""Matplotlib figure rendering for evaluation and recovery reports.

Each helper renders one figure straight to a file; callers pass plain
arrays so the plotting layer stays decoupled from the pipeline objects.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "save_accuracy_plot",
    "save_loss_plot",
    "save_matrix_plot",
    "save_scatter_plot",
    "save_trajectory_plot",
]

_DPI = 150


def save_accuracy_plot(curves: dict, path) -> None:
    """Accuracy-vs-tolerance curves; the first curve's upper bound in black."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    first = next(iter(curves.values()))
    ax.plot(first.tolerances, first.upper_bound, "k-", lw=1.2, label="upper bound")
    for label, curve in curves.items():
        ax.plot(curve.tolerances, curve.accuracy, marker="o", ms=3, lw=1.2, label=label)
    ax.set_xlabel("distance tolerance [m]")
    ax.set_ylabel("fraction correctly localized")
    ax.set_ylim(0.0, 1.02)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_scatter_plot(geo_dist, feat_dist, path, pearson_value=None) -> None:
    """Pairwise feature vs geometric distance scatter."""
    fig, ax = plt.subplots(figsize=(5, 4.5))
    ax.plot(geo_dist, feat_dist, ".", ms=1.5, alpha=0.35)
    ax.set_xlabel("geometric distance [m]")
    ax.set_ylabel("feature distance")
    title = "feature vs geometric distances"
    if pearson_value is not None:
        title += f" (Pearson {pearson_value:.3f} on squared)"
    ax.set_title(title, fontsize=9)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_trajectory_plot(ground_truth, estimates: dict, path) -> None:
    """Ground-truth trajectory overlaid with aligned recoveries."""
    gt = np.asarray(ground_truth, dtype=float)
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(gt[:, 0], gt[:, 1], "k-", lw=1.5, label="ground truth")
    for label, pts in estimates.items():
        pts = np.asarray(pts, dtype=float)
        ax.plot(pts[:, 0], pts[:, 1], lw=1.0, label=label)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_matrix_plot(matrices: dict, path) -> None:
    """Distance matrices side by side; NaNs (masked-out entries) render blank."""
    n = len(matrices)
    fig, axes = plt.subplots(1, n, figsize=(3.4 * n, 3.2))
    if n == 1:
        axes = [axes]
    for ax, (title, mat) in zip(axes, matrices.items()):
        im = ax.imshow(np.asarray(mat, dtype=float), cmap="viridis")
        ax.set_title(title, fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
        fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_loss_plot(loss_log, path) -> None:
    """Per-iteration training loss with its two components."""
    log = np.asarray(loss_log, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(log[:, 0], log[:, 1], lw=0.8, label="total")
    ax.plot(log[:, 0], log[:, 2], lw=0.8, alpha=0.7, label="margin term")
    ax.plot(log[:, 0], log[:, 3], lw=0.8, alpha=0.7, label="proportionality term")
    ax.set_xlabel("anchor iteration")
    ax.set_ylabel("loss")
    ax.set_yscale("symlog", linthresh=1e-3)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
