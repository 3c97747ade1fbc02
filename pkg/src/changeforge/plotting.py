"""
Figures written straight to image files.

Every function takes plain data plus an output path, draws on a fresh
figure, saves it and closes it, so nothing leaks between calls.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DPI = 120
# Fixed metadata keeps PNG bytes stable across runs.
_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=DPI, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_robustness_curve(curve, path, title: str = "Robust detection ratio") -> Path:
    """Ratio against threshold percentile; undefined points are left out."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ps = [s.percentile for s in curve.samples if s.ratio is not None]
    rs = [s.ratio for s in curve.samples if s.ratio is not None]
    ax.plot(ps, rs, marker="o", markersize=3)
    ax.set_xlim(0, 100)
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel("threshold percentile")
    ax.set_ylabel("robust detection ratio")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_curves(curves: Sequence, labels: Sequence[str], path,
                title: str = "Robust detection ratio") -> Path:
    """Several robustness curves on shared axes."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for curve, label in zip(curves, labels):
        pts = [(s.percentile, s.ratio) for s in curve.samples if s.ratio is not None]
        if pts:
            ax.plot(*zip(*pts), marker="o", markersize=3, label=label)
    ax.set_xlim(0, 100)
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel("threshold percentile")
    ax.set_ylabel("robust detection ratio")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_loss_history(history: Sequence, path, validation: Sequence = ()) -> Path:
    """Per-epoch means of the training losses, with held-out cycle loss if given.

    ``history`` holds :class:`LossReport` rows; ``validation`` holds dicts
    with ``epoch`` and ``heldout_cyc`` keys.
    """
    epochs = np.array([r.epoch for r in history])
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(9, 3.5))
    if len(epochs):
        uniq = np.unique(epochs)
        for key, label in (("adv_g", "adv G"), ("adv_f", "adv F"),
                           ("d_x_loss", "D_X"), ("d_y_loss", "D_Y")):
            vals = np.array([getattr(r, key) for r in history])
            ax0.plot(uniq, [vals[epochs == e].mean() for e in uniq], label=label)
        cyc = np.array([r.cyc for r in history])
        ax1.plot(uniq, [cyc[epochs == e].mean() for e in uniq], label="train cycle")
    if validation:
        ax1.plot([v["epoch"] for v in validation], [v["heldout_cyc"] for v in validation],
                 label="held-out cycle")
    ax0.set_title("adversarial terms")
    ax1.set_title("cycle consistency")
    for ax in (ax0, ax1):
        ax.set_xlabel("epoch")
        ax.grid(alpha=0.3)
        ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_anomaly_map(values: np.ndarray, path, title: str = "", mark=None) -> Path:
    """Heat map of one anomaly map; ``mark`` is an optional boolean overlay."""
    fig, ax = plt.subplots(figsize=(4, 3.6))
    im = ax.imshow(values, cmap="magma", interpolation="nearest")
    fig.colorbar(im, ax=ax, shrink=0.85)
    if mark is not None:
        rr, cc = np.nonzero(mark)
        ax.scatter(cc, rr, s=4, facecolors="none", edgecolors="cyan", linewidths=0.5)
    ax.set_title(title)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    return _save(fig, path)


def plot_band_means(before: Sequence[float], after: Sequence[float], target: Sequence[float],
                    path, labels=("X", "G(X)", "Y")) -> Path:
    """Grouped bars of per-band means for source, translated and target tiles."""
    before, after, target = map(np.asarray, (before, after, target))
    idx = np.arange(len(before))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for k, (vals, label) in enumerate(zip((before, after, target), labels)):
        ax.bar(idx + (k - 1) * 0.27, vals, width=0.27, label=label)
    ax.set_xticks(idx)
    ax.set_xticklabels([f"band {i}" for i in idx])
    ax.set_ylabel("mean value")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)
