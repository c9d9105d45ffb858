"""Matplotlib figures rendered next to the delimited report output."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluation import EvalReport
from .trainer import TrainingLog


def save_run_curves(log: TrainingLog, path) -> None:
    """One run: reported MMD and PRL on the left axis pair, target accuracy
    on the right."""
    epochs = [r.epoch for r in log.records]
    fig, (ax_loss, ax_acc) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax_loss.plot(epochs, [r.mmd_reported for r in log.records], label="reported MMD")
    ax_loss.plot(epochs, [r.l_pr for r in log.records], label="parameter reference loss")
    cls_pts = [(r.epoch, r.l_cls) for r in log.records if r.l_cls is not None]
    if cls_pts:
        ax_loss.plot(*zip(*cls_pts), label="classification loss", linestyle="--")
    ax_loss.set_yscale("symlog", linthresh=1e-6)
    ax_loss.set_ylabel("loss")
    ax_loss.legend(fontsize=8)
    accs = [(r.epoch, r.target_acc) for r in log.records if r.target_acc is not None]
    if accs:
        ax_acc.plot(*zip(*accs), color="tab:green")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("target accuracy")
    ax_acc.set_ylim(0.0, 1.0)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_trajectory_figure(report: EvalReport, path) -> None:
    """Accuracy-versus-epoch trajectories per method, one panel per task."""
    tasks = sorted({c.task for c in report.cells})
    if not tasks:
        return
    fig, axes = plt.subplots(1, len(tasks), figsize=(6 * len(tasks), 4.5), squeeze=False)
    for ax, task in zip(axes[0], tasks):
        for cell in report.cells:
            if cell.task != task:
                continue
            pts = [(r.epoch, r.target_acc) for r in cell.log.records if r.target_acc is not None]
            if not pts:
                continue
            ax.plot(*zip(*pts), alpha=0.6, label=f"{cell.method} (seed {cell.seed})")
        ax.set_title(task)
        ax.set_xlabel("epoch")
        ax.set_ylabel("target accuracy")
        ax.legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_threshold_figure(report: EvalReport, path) -> None:
    """Bar chart of accuracy at the minimal common reported-MMD value."""
    rows = [r for r in report.rows if r.accuracy_at_threshold_median is not None]
    if not rows:
        return
    labels = [f"{r.task}\n{r.method}" for r in rows]
    values = [r.accuracy_at_threshold_median for r in rows]
    fig, ax = plt.subplots(figsize=(1.2 * len(rows) + 2, 4))
    ax.bar(range(len(rows)), values, color="tab:blue")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, fontsize=7)
    ax.set_ylabel("accuracy at common MMD")
    if report.common_mmd_threshold is not None:
        ax.set_title(f"common reported MMD threshold = {report.common_mmd_threshold:.4g}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
