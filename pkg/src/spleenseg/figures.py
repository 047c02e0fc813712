"""Plots for evaluation artifacts: epoch curves and score distributions."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_epoch_curves(curves_by_run: dict, path, metric: str = "mean_dsc") -> None:
    """One line per (run, method) across epochs.

    curves_by_run: run label -> curve rows as produced by
    evaluate_checkpoints / load_curve_csv.
    """
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for run_label, rows in curves_by_run.items():
        methods = sorted({r["method"] for r in rows})
        for method in methods:
            pts = [(r["epoch"], r[metric]) for r in rows if r["method"] == method]
            pts.sort()
            label = f"{run_label}/{method}" if len(curves_by_run) > 1 else method
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel(metric.replace("_", " "))
    ax.set_ylim(0.0, 1.0)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=150)
    plt.close(fig)


def plot_score_boxes(scores_by_method: dict, path) -> None:
    """Box plot of per-scan DSC for each method label."""
    labels = list(scores_by_method.keys())
    data = [scores_by_method[k] for k in labels]
    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(labels)), 4.5))
    ax.boxplot(data, tick_labels=labels, showmeans=True)
    ax.set_ylabel("DSC")
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, axis="y", alpha=0.3)
    plt.setp(ax.get_xticklabels(), rotation=30, ha="right", fontsize=8)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=150)
    plt.close(fig)
