"""Static figures: loss curves, margin heatmaps and the known-class sweep."""

from __future__ import annotations

import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from opendg.train import LOSS_COMPONENTS  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.stem + ".tmp" + path.suffix)
    fig.savefig(tmp, dpi=120, bbox_inches="tight")
    plt.close(fig)
    os.replace(tmp, path)
    return path


def plot_loss_curves(history: list[dict], path, title: str | None = None) -> Path:
    """One line per loss component against the training step."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for comp in LOSS_COMPONENTS:
        pts = [(r["step"], r["value"]) for r in history if r["component"] == comp]
        if pts:
            steps, vals = zip(*pts)
            ax.plot(steps, vals, label=comp, linewidth=1)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.axhline(0, color="0.8", linewidth=0.5)
    ax.legend(frameon=False)
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_margin_heatmaps(result, path) -> Path:
    from opendg.sweeps import MARGIN_BANDS, _band_label

    labels = [_band_label(b) for b in MARGIN_BANDS]
    fig, axes = plt.subplots(1, 2, figsize=(10, 4.2))
    for ax, metric in zip(axes, ("acc", "hs")):
        grid = np.full((len(labels), len(labels)), np.nan)
        for i, mu in enumerate(labels):
            for j, sg in enumerate(labels):
                v = result.metric({"mu": mu, "sigma": sg}, metric)
                if v is not None:
                    grid[i, j] = v
        im = ax.imshow(grid, cmap="viridis", origin="upper")
        for i in range(len(labels)):
            for j in range(len(labels)):
                if np.isfinite(grid[i, j]):
                    ax.text(j, i, f"{grid[i, j]:.1f}", ha="center", va="center", color="w", fontsize=8)
        ax.set_xticks(range(len(labels)), labels, rotation=45)
        ax.set_yticks(range(len(labels)), labels)
        ax.set_xlabel("std band [a, b]")
        ax.set_ylabel("mean band [a, b]")
        ax.set_title(metric)
        fig.colorbar(im, ax=ax, shrink=0.8)
    return _save(fig, path)


def plot_known_classes(result, path) -> Path:
    """Two panels (acc, hs) against the number of known classes, one curve per method."""
    from opendg.sweeps import KNOWN_METHODS

    counts = sorted({r["key"]["known"] for r in result.rows})
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5), sharex=True)
    for ax, metric in zip(axes, ("acc", "hs")):
        for method in KNOWN_METHODS:
            ys = [result.metric({"known": k, "method": method}, metric) for k in counts]
            ys = [np.nan if y is None else y for y in ys]
            ax.plot(counts, ys, marker="o", label=method)
        ax.set_xlabel("number of known classes")
        ax.set_ylabel(f"{metric} (%)")
        ax.set_title(metric)
        ax.set_ylim(0, 100)
    axes[0].legend(frameon=False)
    fig.suptitle("Accuracy vs number of known classes")
    return _save(fig, path)


def plot_method_bars(names: list[str], values: list[float], path, ylabel: str = "hs (%)") -> Path:
    fig, ax = plt.subplots(figsize=(1.2 * len(names) + 2, 3.2))
    ax.bar(names, values, color="tab:blue")
    for i, v in enumerate(values):
        ax.text(i, v + 1, f"{v:.1f}", ha="center", fontsize=8)
    ax.set_ylabel(ylabel)
    ax.set_ylim(0, 105)
    return _save(fig, path)
