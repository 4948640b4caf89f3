"""Figure rendering for explanation exports and training history.

All figures are written to files (Agg backend); nothing is shown
interactively.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def render_history(history: list, path) -> Path:
    """Loss-term curves over epochs."""
    path = Path(path)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 3.5))
    epochs = [row["epoch"] for row in history]
    ax1.plot(epochs, [row["total"] for row in history], label="total", color="black")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend(fontsize=8)
    for key in ("recon", "kl_z", "kl_u", "ent_y", "l_y"):
        ax2.plot(epochs, [row[key] for row in history], label=key)
    ax2.set_xlabel("epoch")
    ax2.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _plot_input(ax, x: np.ndarray, title: str) -> None:
    d, t = x.shape
    if t == 1:
        ax.bar(np.arange(d), x[:, 0], color="tab:blue")
        ax.set_xlabel("feature")
    else:
        for ch in range(d):
            ax.plot(x[ch], label=f"ch {ch}", linewidth=1.0)
        ax.set_xlabel("t")
        if d <= 6:
            ax.legend(fontsize=7)
    ax.set_title(title, fontsize=10)


def render_explanation(x: np.ndarray, x_cf: np.ndarray, y_pred, y_cf, path) -> Path:
    """Four panels: input, prediction vs target, counterfactual input, change."""
    path = Path(path)
    fig, axes = plt.subplots(1, 4, figsize=(14, 3.0))
    _plot_input(axes[0], x, "input x")
    y_pred = np.atleast_1d(np.asarray(y_pred, dtype=np.float64))
    y_cf = np.atleast_1d(np.asarray(y_cf, dtype=np.float64))
    if len(y_pred) > 1:
        axes[1].plot(y_pred, label="y_pred", color="tab:blue")
        axes[1].plot(y_cf, label="y_cf", color="tab:orange", linestyle="--")
        axes[1].set_xlabel("t")
    else:
        axes[1].bar([0, 1], [float(y_pred[0]), float(y_cf[0])],
                    tick_label=["y_pred", "y_cf"], color=["tab:blue", "tab:orange"])
    axes[1].set_title("prediction vs target", fontsize=10)
    axes[1].legend(fontsize=7) if len(y_pred) > 1 else None
    _plot_input(axes[2], x_cf, "counterfactual x_cf")
    _plot_input(axes[3], x_cf - x, "change x_cf - x")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
