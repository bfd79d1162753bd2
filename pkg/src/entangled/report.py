"""Matplotlib figures written next to the CSV outputs.

Functions
---------
plot_summary
    Mean test accuracy per entanglement spec with std error bars.
plot_curves
    Test-accuracy curves of every run in a sweep.
plot_refinement
    Refinement ratios and bound band per block.
plot_spectrum
    Singular values of an entanglement operator.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.6),
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.fontsize": 7,
    "legend.frameon": False,
    "svg.hashsalt": "entangled",
}


def save_figure(fig, path) -> Path:
    """Write ``fig`` to ``path`` and close it.

    Metadata that would embed a timestamp or version is stripped so repeated
    runs produce identical files.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_summary(rows: list[dict], path, title: str | None = None) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        labels = [r["spec"] for r in rows]
        mean = np.array([r["mean_acc"] for r in rows], dtype=float)
        std = np.array([r["std_acc"] for r in rows], dtype=float)
        x = np.arange(len(rows))
        ax.bar(x, mean, yerr=std, capsize=3, color="0.6", edgecolor="0.2", linewidth=0.6)
        ax.set_xticks(x, labels, rotation=30, ha="right")
        ax.set_ylabel("test accuracy")
        lo = np.nanmin(mean - std) if len(rows) else 0.0
        ax.set_ylim(max(0.0, lo - 0.05), 1.0)
        if title:
            ax.set_title(title)
        return save_figure(fig, path)


def plot_curves(cells, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        cmap = plt.get_cmap("tab10")
        seen = set()
        for c in cells:
            if c.metrics is None:
                continue
            ep = [r.epoch for r in c.metrics.epochs]
            acc = [r.test_acc for r in c.metrics.epochs]
            label = c.spec.label() if c.spec_index not in seen else None
            seen.add(c.spec_index)
            ax.plot(ep, acc, color=cmap(c.spec_index % 10), lw=0.9, alpha=0.8, label=label)
        ax.set_xlabel("epoch")
        ax.set_ylabel("test accuracy")
        ax.legend(loc="lower right")
        return save_figure(fig, path)


def plot_refinement(rows: list[dict], path) -> Path:
    """Entangled ratio squared against its lower/upper bounds, one panel per checkpoint."""
    checkpoints = sorted({r["checkpoint"] for r in rows}, key=str)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(checkpoints), squeeze=False, sharey=True,
                                 figsize=(3.2 * len(checkpoints), 3.2))
        for ax, ck in zip(axes[0], checkpoints):
            mine = [r for r in rows if r["checkpoint"] == ck]
            b = np.array([r["block_index"] for r in mine])
            ratio2 = np.array([r["entangled_ratio"] for r in mine]) ** 2
            plain2 = np.array([r["plain_ratio"] for r in mine]) ** 2
            lo = np.array([r["lower_bound"] for r in mine])
            hi = np.array([r["upper_bound"] for r in mine])
            hi_plot = np.where(np.isfinite(hi), hi, np.nan)
            ax.fill_between(b, lo, hi_plot, color="0.85", label="bound band")
            ax.plot(b, ratio2, "o-", ms=3, lw=1, color="C3", label="entangled ratio$^2$")
            ax.plot(b, plain2, "s--", ms=3, lw=0.8, color="0.3", label="plain ratio$^2$")
            ax.set_xlabel("block")
            ax.set_title(str(ck))
        axes[0][0].set_ylabel("squared refinement ratio")
        axes[0][0].legend()
        return save_figure(fig, path)


def plot_spectrum(values, path, label: str = "") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 3.0))
        v = np.asarray(values, dtype=float)
        ax.plot(np.arange(1, v.size + 1), v, "o", ms=3, color="C0")
        ax.set_xlabel("index")
        ax.set_ylabel("singular value")
        ax.set_ylim(bottom=0.0)
        if label:
            ax.set_title(label)
        return save_figure(fig, path)
