"""Deterministic SVG figures for run reports.

matplotlib is imported lazily with the Agg backend; a fixed hashsalt and a
stripped Date field keep the SVG output byte-identical across runs.
"""

from __future__ import annotations

import numpy as np

from .metrics import EvalReport
from .schema import FAMILIES


def _plt():
    import matplotlib
    matplotlib.use("Agg", force=True)
    matplotlib.rcParams["svg.hashsalt"] = "tricot"
    import matplotlib.pyplot as plt
    return plt


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    _plt().close(fig)


def save_loss_curve(losses_by_label: dict, title: str, path) -> None:
    """One line per labeled loss series over its own step axis."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for label, losses in losses_by_label.items():
        if losses:
            ax.plot(np.arange(len(losses)), losses, label=label, linewidth=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(title)
    if losses_by_label:
        ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def save_ap_bars(report: EvalReport, title: str, path) -> None:
    """Mean AP per metric family; undefined means plot as zero-height."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    means = [report.families[f].mean_ap or 0.0 for f in FAMILIES]
    ax.bar(range(len(FAMILIES)), means, color="#4878a8")
    ax.set_xticks(range(len(FAMILIES)), FAMILIES)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("mean AP")
    ax.set_title(title)
    for at, value in enumerate(means):
        ax.text(at, value + 0.02, f"{value:.3f}", ha="center", fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def save_fusion_trail(temporal_log: dict, strides, path) -> None:
    """Gamma weights and beta per epoch of the temporal training log."""
    plt = _plt()
    epochs = temporal_log["epochs"]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.5))
    xs = np.arange(1, len(epochs) + 1)
    gammas = np.array([e["gamma"] for e in epochs])
    for j, k in enumerate(strides):
        ax1.plot(xs, gammas[:, j], label=f"stride {k}", linewidth=1.2)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("gamma")
    ax1.set_ylim(0.0, 1.0)
    ax1.legend(fontsize=8)
    ax1.set_title("pathway weights")
    ax2.plot(xs, [e["beta"] for e in epochs], color="#a84848", linewidth=1.2)
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("beta")
    ax2.set_ylim(0.0, 1.0)
    ax2.set_title("spatial/temporal blend")
    fig.tight_layout()
    _save(fig, path)
