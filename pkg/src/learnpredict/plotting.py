"""Figures for experiment reports: per-segment statistics and training curves.

Everything renders through the non-interactive Agg backend so reports can
be produced on headless machines.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .models import TrainTrace  # noqa: E402

MODEL_COLORS = {"bnn": "#4c72b0", "esn": "#dd8452", "tbn": "#55a868", "gbc": "#c44e52"}

# A fixed date keeps PNG/SVG metadata byte-stable across runs.
_METADATA = {"png": {"Software": None}, "svg": {"Date": None}, "pdf": {"CreationDate": None}}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fmt = path.suffix.lstrip(".") or "png"
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata=_METADATA.get(fmt))
    plt.close(fig)
    return path


def plot_segment_stats(rows: Sequence[dict], path: str | Path, relevant: Sequence[int] = ()) -> Path:
    """Bar panels of mean engagement, mean views and mean time per segment.

    ``relevant`` segment ids (if known, e.g. from a synthetic course) are
    drawn in a darker shade.
    """
    seg = [r["segment"] for r in rows]
    rel = set(relevant)
    colors = ["#2a4d7a" if s in rel else "#8fb1d9" for s in seg]
    panels = [
        ("mean_engagement", "engagement"),
        ("mean_views", "views"),
        ("mean_time", "time spent (s)"),
    ]
    fig, axes = plt.subplots(len(panels), 1, figsize=(9, 7), sharex=True)
    for ax, (key, label) in zip(axes, panels):
        ax.bar(seg, [r[key] for r in rows], color=colors, width=0.8)
        ax.set_ylabel(label)
        ax.grid(axis="y", alpha=0.3)
    axes[-1].plot(seg, [r["expected_time"] for r in rows], "k.", ms=4, label="expected time")
    axes[-1].legend(loc="upper right", frameon=False)
    axes[-1].set_xlabel("segment")
    axes[0].set_xlim(0.3, len(seg) + 0.7)
    return _save(fig, path)


def plot_training_curves(traces: Mapping[str, TrainTrace], path: str | Path) -> Path:
    """Held-out accuracy, AUC and training loss against epoch, one line per model."""
    fig, axes = plt.subplots(1, 3, figsize=(13, 3.6))
    for name, trace in traces.items():
        color = MODEL_COLORS.get(name)
        axes[0].plot(trace.epoch, trace.accuracy, color=color, lw=1, label=name.upper())
        axes[1].plot(trace.epoch, trace.auc, color=color, lw=1)
        axes[2].plot(trace.epoch, trace.loss, color=color, lw=1)
    for ax, title in zip(axes, ("accuracy", "AUC", "training loss")):
        ax.set_title(title)
        ax.set_xlabel("epoch")
        ax.grid(alpha=0.3)
    axes[2].set_yscale("log")
    axes[0].legend(frameon=False)
    fig.tight_layout()
    return _save(fig, path)


def plot_auc_summary(summary: Mapping[str, dict], path: str | Path) -> Path:
    """Mean fold AUC with a one-stddev error bar per model."""
    names = list(summary)
    means = [summary[m]["auc"] for m in names]
    errs = [summary[m]["auc_std"] for m in names]
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.bar(
        [m.upper() for m in names],
        means,
        yerr=errs,
        capsize=4,
        color=[MODEL_COLORS.get(m, "grey") for m in names],
    )
    lo = min(means) - 3 * max(errs + [0.01])
    ax.set_ylim(max(0.0, lo), 1.0)
    ax.set_ylabel("mean AUC")
    ax.grid(axis="y", alpha=0.3)
    return _save(fig, path)
