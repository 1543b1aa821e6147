"""Static figures: loss curves, pose-error curves, traced contours, saliency examples."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import LineCollection  # noqa: E402

from .simworld import Contour  # noqa: E402

# fixed metadata keeps PNG bytes reproducible
_META = {"Software": None}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def plot_loss_curves(curves: dict[str, Sequence[float]], path: str | Path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for name, values in curves.items():
        if len(values):
            ax.plot(np.arange(1, len(values) + 1), values, label=name)
    ax.set_xlabel("epoch")
    ax.set_yscale("log")
    ax.set_title(title)
    ax.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, path)


def plot_pose_curves(bins: np.ndarray, curves: dict[str, np.ndarray], path: str | Path) -> Path:
    """y and rz MAE against distractor offset for each arm."""
    centres = 0.5 * (bins[:-1] + bins[1:])
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.2))
    for arm, rows in curves.items():
        axes[0].plot(centres, rows[:, 0], marker="o", label=arm)
        axes[1].plot(centres, rows[:, 1], marker="o", label=arm)
    axes[0].set_ylabel("y MAE (mm)")
    axes[1].set_ylabel("rz MAE (deg)")
    for ax in axes:
        ax.set_xlabel("distractor offset (mm)")
        ax.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, path)


def plot_trajectory(contour: Contour, positions: np.ndarray, path: str | Path,
                    distractors: Sequence[tuple[float, float, float]] = (), title: str = "") -> Path:
    """Trace coloured by its absolute distance from the contour."""
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    pts = contour.points
    ax.plot(*np.vstack([pts, pts[:1]]).T, color="0.6", lw=1)
    for x, y, r in distractors:
        ax.add_patch(plt.Circle((x, y), r, color="tab:red", alpha=0.3))
    positions = np.asarray(positions)
    if len(positions) > 1:
        err = np.abs(contour.sdf(positions))
        segs = np.stack([positions[:-1], positions[1:]], axis=1)
        lc = LineCollection(segs, cmap="viridis", norm=plt.Normalize(0, max(2.0, float(err.max()))))
        lc.set_array(0.5 * (err[:-1] + err[1:]))
        lc.set_linewidth(2)
        ax.add_collection(lc)
        fig.colorbar(lc, ax=ax, shrink=0.7, label="|deviation| (mm)")
    ax.set_aspect("equal")
    ax.autoscale_view()
    ax.set_title(title, fontsize=9)
    fig.tight_layout()
    return _save(fig, path)


def plot_saliency_examples(rows: Sequence[Sequence[np.ndarray]], titles: Sequence[str],
                           path: str | Path) -> Path:
    rows = list(rows)
    fig, axes = plt.subplots(len(rows), len(titles), figsize=(1.6 * len(titles), 1.6 * len(rows)),
                             squeeze=False)
    for r, row in enumerate(rows):
        for c, img in enumerate(row):
            ax = axes[r, c]
            ax.imshow(img, cmap="gray", vmin=0, vmax=1)
            ax.set_xticks([])
            ax.set_yticks([])
            if r == 0:
                ax.set_title(titles[c], fontsize=8)
    fig.tight_layout()
    return _save(fig, path)
