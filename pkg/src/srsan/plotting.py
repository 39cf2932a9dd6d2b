"""Figures written next to the tab-delimited reports."""

from __future__ import annotations

import math
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}

AXIS_LABELS = {
    "d": "embedding size",
    "heads": "attention heads",
    "layers": "SAN layers",
    "ffn_mult": "feed-forward width (x embedding size)",
}


def fig_size(width: float = 6.0, ratio: float | None = None) -> tuple[float, float]:
    if ratio is None:
        ratio = (math.sqrt(5) - 1.0) / 2.0
    return width, width * ratio


def plot_training_log(records: list[dict], path: str, k: int = 20) -> None:
    """Loss and HR/MRR@k per epoch, two panels side by side."""
    epochs = [r["epoch"] for r in records]
    with plt.rc_context(STYLE):
        fig, (ax_loss, ax_rank) = plt.subplots(1, 2, figsize=fig_size(8.0, 0.4))
        ax_loss.plot(epochs, [r["train_loss"] for r in records], marker="o")
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("mean training loss")
        ax_rank.plot(epochs, [100 * r[f"hr@{k}"] for r in records], marker="o", label=f"HR@{k}")
        ax_rank.plot(epochs, [100 * r[f"mrr@{k}"] for r in records], marker="s", label=f"MRR@{k}")
        ax_rank.set_xlabel("epoch")
        ax_rank.set_ylabel("%")
        ax_rank.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_sweep(rows: list[dict], dims: list[str], path: str, k: int = 20) -> None:
    """One panel per swept dimension: best HR@k over the other dimensions."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(dims), figsize=fig_size(3.2 * len(dims), 0.8 / len(dims) * 1.5),
                                 squeeze=False)
        for ax, dim in zip(axes[0], dims):
            best = defaultdict(float)
            for row in rows:
                best[row[dim]] = max(best[row[dim]], row[f"hr@{k}"])
            xs = sorted(best)
            ax.plot(range(len(xs)), [100 * best[x] for x in xs], marker="o")
            ax.set_xticks(range(len(xs)), [str(x) for x in xs])
            ax.set_xlabel(AXIS_LABELS.get(dim, dim))
            ax.set_ylabel(f"HR@{k} (%)")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
