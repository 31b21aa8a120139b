"""Figures written next to the tabular reports (Agg backend, PNG only)."""
from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .report import GridReport, SuiteReport

RC = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "svg.hashsalt": "memerobust",
}
# no timestamps or version strings, so reruns give identical files
PNG_META = {"Software": None}

TEXT_LABELS = ("Typos", "HotFlip", "Triggers", "Back-transl.")
IMAGE_LABELS = ("UAP", "Corruption", "AugMix")
METRIC_LABELS = ("Accuracy", "AUROC", "F1")


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, format="png", dpi=120, metadata=PNG_META)
    plt.close(fig)
    return path


def grid_heatmap(report: GridReport, path) -> Path:
    """One panel per metric: drop from clean for every (text, image) cell."""
    deltas = report.deltas
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, 3, figsize=(9.0, 3.2), constrained_layout=True)
        vmax = max([abs(v) for d in deltas.values() for v in d] + [1e-6])
        for m, ax in enumerate(axes):
            grid = np.full((4, 3), np.nan)
            for (t, i), d in deltas.items():
                grid[t - 1, i - 1] = d[m]
            im = ax.imshow(grid, cmap="RdBu_r", vmin=-vmax, vmax=vmax)
            for (r, c), v in np.ndenumerate(grid):
                if np.isfinite(v):
                    ax.text(c, r, f"{v:.3f}", ha="center", va="center", fontsize=7)
            ax.set_xticks(range(3), IMAGE_LABELS)
            ax.set_yticks(range(4), TEXT_LABELS if m == 0 else [""] * 4)
            ax.set_title(f"Drop in {METRIC_LABELS[m]}")
        fig.colorbar(im, ax=axes, shrink=0.8, label="clean - perturbed")
        return _save(fig, path)


def suite_chart(report: SuiteReport, path) -> Path:
    """Accuracy per perturbation for the text-only and image-only tables."""
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, 2, figsize=(8.0, 3.0), constrained_layout=True, sharey=True)
        for ax, table, title in ((axes[0], report.text, "Text only"), (axes[1], report.image, "Image only")):
            names = ["Clean"] + [table.family_name(f) for f in table.rows]
            accs = [table.clean.accuracy] + [r.accuracy for r in table.rows.values()]
            x = np.arange(len(names))
            ax.bar(x, accs, color=["0.45"] + ["C0"] * (len(names) - 1), width=0.6)
            ax.axhline(table.clean.accuracy, color="0.3", lw=0.8, ls="--")
            ax.set_xticks(x, names, rotation=30, ha="right")
            ax.set_ylim(0, 1)
            ax.set_title(title)
        axes[0].set_ylabel("Accuracy")
        return _save(fig, path)
