"""File-based reporting: comparison grids and loss-curve figures.

Figures are rendered with the Agg backend straight to disk; the metric
tables that accompany them are written as CSV/JSON by the CLI.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import ConfigError


def comparison_columns(checkpoint_names, with_global: bool) -> list:
    """Column plan for the comparison grid: (key, caption) pairs.

    Layout: satellite, then per checkpoint its output column(s), then the
    ground truth. With `with_global` each checkpoint contributes both its
    coarse and refined outputs.
    """
    if not checkpoint_names:
        raise ConfigError("comparison needs at least one checkpoint")
    columns = [("satellite", "satellite")]
    for name in checkpoint_names:
        if with_global:
            columns.append((f"{name}/global", f"{name} (coarse)"))
            columns.append((f"{name}/final", f"{name} (refined)"))
        else:
            columns.append((f"{name}/final", name))
    columns.append(("target", "ground truth"))
    return columns


def render_comparison_grid(rows, columns, out_path) -> Path:
    """Draw a rows x columns panel image with captions and save it as PNG.

    `rows` is a list of dicts mapping column keys to HxWx3 uint8 images.
    """
    if not rows:
        raise ConfigError("comparison grid needs at least one sample row")
    n_rows, n_cols = len(rows), len(columns)
    fig, axes = plt.subplots(
        n_rows, n_cols, figsize=(2.2 * n_cols, 2.2 * n_rows), squeeze=False
    )
    for r, row in enumerate(rows):
        for c, (key, caption) in enumerate(columns):
            ax = axes[r][c]
            ax.imshow(np.asarray(row[key]))
            ax.set_xticks([])
            ax.set_yticks([])
            if r == 0:
                ax.set_title(caption, fontsize=9)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def render_loss_curves(history, out_path) -> Path:
    """Plot every loss column of a StepReport history against the step index."""
    from .training import LOSS_COLUMNS

    if not history:
        raise ConfigError("empty loss history")
    steps = [rep.step for rep in history]
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for column in LOSS_COLUMNS:
        ax.plot(steps, [getattr(rep, column) for rep in history], label=column, linewidth=1)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8, ncol=2)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
