"""PNG figures written next to the CSV/JSON outputs."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .shs.modes import ModeClass  # noqa: E402

CLASS_COLORS = ("tab:green", "tab:red", "tab:blue")


def confusion_figure(counts, path, title: str = "Confusion matrix", labels=None) -> Path:
    counts = np.asarray(counts)
    labels = labels or [c.label for c in ModeClass][: counts.shape[0]]
    fig, ax = plt.subplots(figsize=(4.2, 3.8))
    ax.imshow(counts, cmap="Blues")
    for i in range(counts.shape[0]):
        for j in range(counts.shape[1]):
            shade = "white" if counts[i, j] > counts.max() / 2 else "black"
            ax.text(j, i, str(int(counts[i, j])), ha="center", va="center", color=shade)
    ax.set_xticks(range(len(labels)), labels)
    ax.set_yticks(range(len(labels)), labels)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    total = counts.sum()
    acc = np.trace(counts) / total if total else float("nan")
    ax.set_title(f"{title} (accuracy {acc:.3f})")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def sequence_figure(true_class, pred_class, path, max_cycles: int | None = 50) -> Path:
    """Detected and true class per cycle, one colored marker per cycle."""
    true_class = np.asarray(true_class)
    pred_class = np.asarray(pred_class)
    if max_cycles is not None:
        true_class, pred_class = true_class[:max_cycles], pred_class[:max_cycles]
    cycles = np.arange(len(true_class))
    fig, axes = plt.subplots(2, 1, figsize=(8, 3.6), sharex=True)
    for ax, seq, name in ((axes[0], pred_class, "detected"), (axes[1], true_class, "true")):
        for c in ModeClass:
            sel = seq == int(c)
            ax.scatter(cycles[sel], seq[sel], s=18, color=CLASS_COLORS[int(c)], label=c.label)
        ax.step(cycles, seq, where="mid", color="0.7", lw=0.8, zorder=0)
        ax.set_yticks([int(c) for c in ModeClass], [c.label for c in ModeClass])
        ax.set_ylabel(name)
    axes[0].legend(loc="upper right", fontsize=7, ncol=3)
    axes[1].set_xlabel("detection cycle")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def history_figure(history, path) -> Path:
    epochs = [r["epoch"] for r in history]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(epochs, [r["train_loss"] for r in history], label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("cross-entropy")
    ax2 = ax.twinx()
    ax2.plot(epochs, [r["train_acc"] for r in history], color="tab:orange", label="train acc")
    if any(r.get("test_acc") is not None for r in history):
        ax2.plot(epochs, [r.get("test_acc") for r in history], color="tab:green", label="test acc")
    ax2.set_ylim(0, 1.02)
    ax2.set_ylabel("accuracy")
    fig.legend(loc="center right", fontsize=7)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
