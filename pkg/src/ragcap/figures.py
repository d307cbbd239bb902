"""Figure rendering for report outputs.

The evaluate and ablate commands write a PNG next to their delimited
output: a metric bar chart for a single evaluation, and per-sweep metric
curves for an ablation grid.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import EvalReport


def save_report_figure(report: EvalReport, path) -> Path:
    """Bar chart of the four corpus metrics."""
    path = Path(path)
    names = ["bleu1", "bleu4", "rougeL", "ciderD"]
    values = [report.bleu1, report.bleu4, report.rougeL, report.ciderD]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    bars = ax.bar(names, values, color="#4878cf")
    ax.bar_label(bars, fmt="%.3f", padding=2, fontsize=8)
    ax.set_ylabel("score")
    ax.set_title(f"caption metrics ({report.language}, n={report.count})")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_ablation_figure(rows: list[dict], path) -> Path:
    """One panel per sweep group, CIDEr-D against the varying axis."""
    path = Path(path)
    groups: dict[str, list[dict]] = {}
    for row in rows:
        groups.setdefault(row["grid"], []).append(row)
    count = max(1, len(groups))
    fig, axes = plt.subplots(1, count, figsize=(4 * count, 3.2), squeeze=False)
    for ax, (grid, cells) in zip(axes[0], groups.items()):
        ks = {cell["k"] for cell in cells}
        axis = "k" if len(ks) > 1 else "n"
        xs = [cell[axis] for cell in cells]
        ys = [cell["ciderD"] for cell in cells]
        ax.plot(xs, ys, marker="o", color="#4878cf")
        ax.set_xlabel(axis.upper())
        ax.set_ylabel("CIDEr-D")
        ax.set_title(grid, fontsize=9)
        ax.set_xticks(sorted(set(xs)))
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
