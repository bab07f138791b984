"""Report figures rendered next to the delimited outputs.

Every table the CLI writes gets a companion PNG: loss curves for training
runs, a grouped bar chart for ablations, a delta line for the edge-drop
sweep, and per-domain bars for the shift evaluation.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from cnlgnn.metrics import MetricReport

_LOSS_KEYS = ("total", "classification", "contrastive", "orthogonality", "mutual_info")


def plot_epochs(epoch_logs: list[list[dict]], path) -> None:
    """Loss terms and validation F1 over epochs, one pane each; folds overlay."""
    fig, (ax_loss, ax_f1) = plt.subplots(1, 2, figsize=(10, 4))
    for key in _LOSS_KEYS:
        mean_curve = []
        for i in range(max(len(log) for log in epoch_logs)):
            vals = [log[i][key] for log in epoch_logs if i < len(log)]
            mean_curve.append(sum(vals) / len(vals))
        ax_loss.plot(range(len(mean_curve)), mean_curve, label=key)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.legend(fontsize=8)
    for i, log in enumerate(epoch_logs):
        ax_f1.plot([e["epoch"] for e in log], [e["val_f1"] for e in log], alpha=0.8,
                   label=f"fold {i}" if len(epoch_logs) > 1 else "val")
    ax_f1.set_xlabel("epoch")
    ax_f1.set_ylabel("validation F1")
    ax_f1.set_ylim(0, 1)
    if len(epoch_logs) <= 6:
        ax_f1.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_sweep(rows: list[dict], path) -> None:
    """Delta F1 vs edge drop rate, normalized at the 0.1 baseline."""
    fig, ax = plt.subplots(figsize=(6, 4))
    taus = [r["tau"] for r in rows]
    deltas = [100.0 * r["delta_vs_0.1"] for r in rows]
    stds = [100.0 * r["f1_std"] for r in rows]
    ax.errorbar(taus, deltas, yerr=stds, marker="o", capsize=3)
    ax.axhline(0.0, color="gray", lw=0.8, ls="--")
    ax.set_xlabel("edge drop rate")
    ax.set_ylabel("delta F1 vs 0.1 (points)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_shift(reports: list[tuple[str, MetricReport]], path) -> None:
    """Precision/recall/F1 bars per evaluation domain."""
    fig, ax = plt.subplots(figsize=(1.8 + 1.4 * len(reports), 4))
    names = [name for name, _ in reports]
    xs = range(len(names))
    width = 0.27
    for off, (label, attr) in enumerate(
        (("precision", "macro_precision"), ("recall", "macro_recall"), ("F1", "macro_f1"))
    ):
        vals = [getattr(rep, attr) for _, rep in reports]
        ax.bar([x + (off - 1) * width for x in xs], vals, width=width, label=label)
    ax.set_xticks(list(xs))
    ax.set_xticklabels(names, rotation=20, ha="right")
    ax.set_ylim(0, 1)
    ax.set_ylabel("score")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_ablation(results: list[tuple[str, float, float]], path) -> None:
    """Mean F1 with std whiskers per model variant."""
    fig, ax = plt.subplots(figsize=(1.8 + 1.2 * len(results), 4))
    names = [n for n, _, _ in results]
    means = [m for _, m, _ in results]
    stds = [s for _, _, s in results]
    ax.bar(range(len(names)), means, yerr=stds, capsize=4)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=20, ha="right")
    ax.set_ylim(0, 1)
    ax.set_ylabel("macro F1")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
