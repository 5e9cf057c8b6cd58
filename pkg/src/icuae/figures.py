"""Rendering of report artifacts as PNG files.

Every function takes plain arrays/dicts and writes one file, so the CSV
emitters stay the source of truth and the plots are a pure view of them.
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import ConfigError  # noqa: E402

SERIES_COLORS = ("#4c72b0", "#dd8452", "#55a868", "#c44e52")


def render_grouped_bars(table: Dict[str, Dict[str, Optional[float]]],
                        out_path, xlabel: str,
                        ylabel: str = "Test MSE",
                        title: Optional[str] = None) -> Path:
    """Grouped bar chart: one x group per table row, one bar per column."""
    if not table:
        raise ConfigError("nothing to plot: empty table")
    groups = list(table)
    series: List[str] = []
    for row in table.values():
        for name in row:
            if name not in series:
                series.append(name)
    if not series:
        raise ConfigError("nothing to plot: rows have no columns")

    width = 0.8 / len(series)
    x = np.arange(len(groups), dtype=float)
    fig, ax = plt.subplots(figsize=(1.8 + 1.4 * len(groups), 4.0))
    for k, name in enumerate(series):
        heights = [table[g].get(name) for g in groups]
        offset = (k - (len(series) - 1) / 2.0) * width
        shown = [h if h is not None else 0.0 for h in heights]
        ax.bar(x + offset, shown, width=width, label=name,
               color=SERIES_COLORS[k % len(SERIES_COLORS)])
    ax.set_xticks(x)
    ax.set_xticklabels(groups)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def render_history(train_mse: Sequence[float],
                   validation_mse: Sequence[float],
                   best_epoch: int, out_path) -> Path:
    """Training and validation MSE per epoch, with the restored epoch marked."""
    if len(train_mse) != len(validation_mse) or not train_mse:
        raise ConfigError("history series must be non-empty and aligned")
    epochs = np.arange(1, len(train_mse) + 1)
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.plot(epochs, train_mse, label="train", color=SERIES_COLORS[0])
    ax.plot(epochs, validation_mse, label="validation", color=SERIES_COLORS[1])
    ax.axvline(best_epoch, color="0.5", linestyle="--", linewidth=1,
               label=f"best epoch ({best_epoch})")
    ax.set_xlabel("Epoch")
    ax.set_ylabel("MSE")
    ax.set_yscale("log")
    ax.legend(frameon=False)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def render_reconstruction_grid(true_window: np.ndarray,
                               recon_window: np.ndarray,
                               feature_names: Sequence[str],
                               true_hours: int, out_path) -> Path:
    """One small panel per feature: observed-grid value vs reconstruction.

    The region past true_hours (zero padding) is shaded.
    """
    true_window = np.asarray(true_window, dtype=np.float64)
    recon_window = np.asarray(recon_window, dtype=np.float64)
    if true_window.shape != recon_window.shape or true_window.ndim != 2:
        raise ConfigError(f"window shapes must match and be 2-D, got "
                          f"{true_window.shape} and {recon_window.shape}")
    hours, n_features = true_window.shape
    if len(feature_names) != n_features:
        raise ConfigError(f"{len(feature_names)} names for "
                          f"{n_features} features")

    n_cols = 5
    n_rows = (n_features + n_cols - 1) // n_cols
    fig, axes = plt.subplots(n_rows, n_cols, sharex=True,
                             figsize=(2.6 * n_cols, 1.7 * n_rows))
    axes = np.atleast_2d(axes)
    t = np.arange(hours)
    for f in range(n_rows * n_cols):
        ax = axes[f // n_cols][f % n_cols]
        if f >= n_features:
            ax.axis("off")
            continue
        ax.plot(t, true_window[:, f], color=SERIES_COLORS[0],
                linewidth=1, label="input")
        ax.plot(t, recon_window[:, f], color=SERIES_COLORS[1],
                linewidth=1, label="reconstruction")
        if true_hours < hours:
            ax.axvspan(true_hours - 0.5, hours - 0.5,
                       color="0.9", zorder=0)
        ax.set_title(feature_names[f], fontsize=8)
        ax.set_ylim(-0.05, 1.05)
        ax.tick_params(labelsize=7)
    handles, labels = axes[0][0].get_legend_handles_labels()
    fig.legend(handles, labels, loc="lower right", frameon=False)
    fig.supxlabel("Hour", fontsize=9)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path
