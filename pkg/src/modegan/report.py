"""Figure rendering and summary statistics for run reports.

Every figure is rendered straight to a file next to the delimited output
it illustrates; the CSV/JSON artifacts stay the canonical machine-readable
record.  Generated-segment quality is summarized numerically (per-channel
moments, speed autocorrelation) since trajectory segments cannot be
judged visually the way images can.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .geokin import CHANNEL_ORDER
from .train import LossTrace, Metrics

_SPEED_CH = CHANNEL_ORDER.index("speed")


def render_loss_curves(trace: LossTrace, path: str | Path,
                       title: str = "training losses") -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(7, 4))
    steps = trace.steps
    ax.plot(steps, trace.supervised, label="supervised", lw=1.0)
    if any(v != 0.0 for v in trace.unsupervised):
        ax.plot(steps, trace.unsupervised, label="unsupervised", lw=1.0)
        ax.plot(steps, trace.total, label="total", lw=1.0)
    if any(v != 0.0 for v in trace.generator):
        ax.plot(steps, trace.generator, label="generator", lw=1.0)
    ax.set_xlabel("training step")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def render_confusion(metrics: Metrics, path: str | Path) -> Path:
    path = Path(path)
    cm = np.asarray(metrics.confusion)
    names = [m for m in ("walk", "bike", "transit", "car")]
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(cm, cmap="Blues")
    ax.set_xticks(range(len(names)), names)
    ax.set_yticks(range(len(names)), names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(f"model {metrics.model}, fold {metrics.fold}, "
                 f"acc {metrics.accuracy:.3f}")
    thresh = cm.max() / 2 if cm.max() else 0
    for i in range(cm.shape[0]):
        for j in range(cm.shape[1]):
            ax.text(j, i, str(cm[i, j]), ha="center", va="center",
                    color="white" if cm[i, j] > thresh else "black")
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def render_fold_accuracies(aggregate: dict, path: str | Path) -> Path:
    path = Path(path)
    accs = aggregate["fold_accuracies"]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(range(len(accs)), accs, color="#4878a8")
    ax.axhline(aggregate["accuracy_weighted_mean"], color="#b04030", ls="--",
               label=f"weighted mean {aggregate['accuracy_weighted_mean']:.3f}")
    ax.set_xlabel("fold")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1)
    ax.set_title(f"model {aggregate['model']}, {aggregate['k']}-fold")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def channel_moments(values: np.ndarray,
                    valid_lens: np.ndarray | None = None) -> dict:
    """Per-channel mean/std over valid rows of stacked segments."""
    if valid_lens is None:
        rows = values.reshape(-1, values.shape[-1])
    else:
        mask = np.arange(values.shape[1])[None, :] < valid_lens[:, None]
        rows = values[mask]
    rows = rows.astype(np.float64)
    return {
        name: {"mean": float(rows[:, i].mean()), "std": float(rows[:, i].std())}
        for i, name in enumerate(CHANNEL_ORDER)
    }


def speed_autocorr(values: np.ndarray,
                   valid_lens: np.ndarray | None = None) -> float:
    """Mean per-segment lag-1 autocorrelation of the speed channel."""
    n = values.shape[0]
    lens = valid_lens if valid_lens is not None else np.full(n, values.shape[1])
    acs = []
    for i in range(n):
        s = values[i, : int(lens[i]), _SPEED_CH].astype(np.float64)
        if len(s) < 3 or s.std() < 1e-12:
            continue
        a, b = s[:-1], s[1:]
        denom = a.std() * b.std()
        if denom < 1e-12:
            continue
        acs.append(float(((a - a.mean()) * (b - b.mean())).mean() / denom))
    return float(np.mean(acs)) if acs else 0.0


def render_channel_stats(fake_moments: dict, real_moments: dict | None,
                         path: str | Path) -> Path:
    """Grouped bars of per-channel mean and std, fake vs. real."""
    path = Path(path)
    names = list(CHANNEL_ORDER)
    x = np.arange(len(names))
    width = 0.35
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    for ax, key in zip(axes, ("mean", "std")):
        ax.bar(x - width / 2, [fake_moments[n][key] for n in names], width,
               label="generated", color="#b04030")
        if real_moments is not None:
            ax.bar(x + width / 2, [real_moments[n][key] for n in names],
                   width, label="real", color="#4878a8")
        ax.set_xticks(x, names, rotation=30, ha="right")
        ax.set_title(f"per-channel {key}")
        ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path
