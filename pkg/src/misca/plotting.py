"""Matplotlib figures written next to the text artifacts (Agg backend, no display)."""
from __future__ import annotations

from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def training_curves(history, path, title: str = "") -> Path:
    """Train loss and the three validation metrics per epoch."""
    epochs = [r.epoch for r in history]
    fig, (ax_loss, ax_val) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_loss.plot(epochs, [r.train_loss for r in history], color="black")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train loss")
    for key, label in (
        ("val_intent_acc", "intent acc"),
        ("val_slot_f1", "slot F1"),
        ("val_overall_acc", "overall acc"),
    ):
        ax_val.plot(epochs, [getattr(r, key) for r in history], label=label)
    ax_val.set_ylim(-0.02, 1.02)
    ax_val.set_xlabel("epoch")
    ax_val.legend(loc="lower right", fontsize=8)
    if title:
        fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    return _save(fig, path)


def per_slot_f1(per_slot: Dict[str, Tuple[float, float, float, int]], path) -> Path:
    labels = sorted(per_slot)
    fig, ax = plt.subplots(figsize=(6, 0.35 * max(len(labels), 1) + 1.2))
    ax.barh(labels, [per_slot[k][2] for k in labels], color="tab:blue")
    ax.set_xlim(0, 1)
    ax.set_xlabel("F1")
    ax.invert_yaxis()
    fig.tight_layout()
    return _save(fig, path)


def heatmap(
    matrix: np.ndarray,
    path,
    row_labels: Optional[Sequence[str]] = None,
    col_labels: Optional[Sequence[str]] = None,
    title: str = "",
) -> Path:
    m = np.asarray(matrix)
    fig, ax = plt.subplots(figsize=(0.5 * m.shape[1] + 2.5, 0.4 * m.shape[0] + 1.5))
    lim = float(np.abs(m).max()) or 1.0
    im = ax.imshow(m, cmap="RdBu_r", vmin=-lim, vmax=lim, aspect="auto")
    if row_labels is not None:
        ax.set_yticks(range(len(row_labels)), row_labels, fontsize=7)
    if col_labels is not None:
        ax.set_xticks(range(len(col_labels)), col_labels, rotation=60, ha="right", fontsize=7)
    ax.set_title(title, fontsize=9)
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    return _save(fig, path)


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
