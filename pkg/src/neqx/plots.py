"""Report figures rendered to files with the non-interactive Agg backend."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["plot_recall_curves", "plot_norm_histogram"]


def plot_recall_curves(curves: dict, path, topk: int) -> None:
    """One line per model; shaded band of one standard deviation when repeated."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for name, curve in curves.items():
        t = curve.checkpoints
        ax.plot(t, curve.mean_recall, marker="o", ms=3, label=name)
        if curve.stddev.any():
            ax.fill_between(t, curve.mean_recall - curve.stddev, curve.mean_recall + curve.stddev, alpha=0.2)
    ax.set_xscale("log")
    ax.set_xlabel("items probed (T)")
    ax.set_ylabel(f"recall of top-{topk}")
    ax.set_ylim(0, 1.02)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_norm_histogram(stats, path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    widths = stats.edges[1:] - stats.edges[:-1]
    ax.bar(stats.edges[:-1], stats.histogram, width=widths, align="edge", edgecolor="none")
    ax.axvline(stats.mean, color="k", lw=1, ls="--")
    ax.set_xlabel("item norm")
    ax.set_ylabel("items")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
