"""Figures written next to the CSV/JSON outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..metrics import MetricsReport  # noqa: E402

STYLE = {
    "figure.dpi": 110,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_training_curves(history: list[dict], path) -> Path:
    steps = np.array([r["step"] for r in history])
    with plt.rc_context(STYLE):
        fig, (ax_loss, ax_score) = plt.subplots(1, 2, figsize=(9, 3.4))
        for key, label in (("l_final", "total (2 L_i + L_o)"), ("l_i", "coarse head"), ("l_o", "final head")):
            ax_loss.plot(steps, [r[key] for r in history], lw=1, label=label)
        ax_loss.set_xlabel("step")
        ax_loss.set_ylabel("loss")
        ax_loss.legend(frameon=False)
        for key in ("dice", "accuracy", "bce"):
            ax_score.plot(steps, [r[key] for r in history], lw=1, label=key)
        ax_score.set_xlabel("step")
        ax_score.legend(frameon=False)
        return _save(fig, path)


def plot_metric_bars(report: MetricsReport, path) -> Path:
    names = [r.name for r in report.rows]
    x = np.arange(len(names))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(max(7.0, 0.25 * len(names) + 4), 3.2))
        for ax, key, title in zip(axes, ("object_dice", "f1", "object_hausdorff"),
                                  ("Object Dice", "F1 Score", "Hausdorff")):
            vals = [getattr(r, key) for r in report.rows]
            ax.bar(x, vals, color="0.55", width=0.8)
            ax.axhline(getattr(report.mean, key), color="C3", lw=1)
            ax.set_title(f"{title} (mean {getattr(report.mean, key):.3f})")
            ax.set_xticks(x if len(names) <= 20 else [])
            if len(names) <= 20:
                ax.set_xticklabels(names, rotation=90, fontsize=6)
        return _save(fig, path)


def _outline(labels: np.ndarray) -> np.ndarray:
    """Pixels whose label differs from a 4-neighbour (object boundaries)."""
    edge = np.zeros(labels.shape, dtype=bool)
    edge[1:] |= labels[1:] != labels[:-1]
    edge[:-1] |= labels[:-1] != labels[1:]
    edge[:, 1:] |= labels[:, 1:] != labels[:, :-1]
    edge[:, :-1] |= labels[:, :-1] != labels[:, 1:]
    return edge & (labels > 0)


def plot_overlays(samples, path) -> Path:
    """``samples``: list of (name, rgb, ground-truth labels, predicted labels).

    Ground-truth boundaries are drawn in green, predicted ones in red.
    """
    n = max(len(samples), 1)
    with plt.rc_context({**STYLE, "axes.grid": False}):
        fig, axes = plt.subplots(1, n, figsize=(2.6 * n, 2.8), squeeze=False)
        for ax, (name, rgb, gt, seg) in zip(axes[0], samples):
            shown = rgb.astype(np.float32) / 255.0
            if shown.shape[:2] != gt.shape:
                shown = np.full(gt.shape + (3,), 0.5, np.float32)
            shown[_outline(gt)] = (0.0, 0.9, 0.0)
            shown[_outline(seg)] = (0.95, 0.1, 0.1)
            ax.imshow(shown, interpolation="nearest")
            ax.set_title(name, fontsize=8)
            ax.axis("off")
        return _save(fig, path)


def plot_preprocessing(rgb: np.ndarray, hematoxylin: np.ndarray, sharpened: np.ndarray, path) -> Path:
    with plt.rc_context({**STYLE, "axes.grid": False}):
        fig, axes = plt.subplots(1, 3, figsize=(9, 3.2))
        for ax, img, title in zip(axes, (rgb, hematoxylin, sharpened),
                                  ("RGB", "hematoxylin", "hematoxylin + unsharp mask")):
            ax.imshow(img, cmap=None if img.ndim == 3 else "gray", vmin=0, vmax=None if img.ndim == 3 else 1)
            ax.set_title(title)
            ax.axis("off")
        return _save(fig, path)
