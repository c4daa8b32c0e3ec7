"""Report figures. Rendered headless; PNG metadata is stripped so reruns are byte-stable."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "cuprank",
}

_METRIC_LABELS = {"conversion": "Conversion", "clicks_per_user": "Clicks / user", "ctr": "CTR"}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_metrics(report, path) -> Path:
    """One panel per metric: point estimate per arm with its 95% interval."""
    metrics = [m for m in _METRIC_LABELS if all(m in a.metrics() for a in report.arms)]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(metrics), figsize=(3.0 * len(metrics), 2.8))
        axes = np.atleast_1d(axes)
        names = [a.name for a in report.arms]
        x = np.arange(len(names))
        for ax, m in zip(axes, metrics):
            est = [a.metrics()[m] for a in report.arms]
            ax.bar(x, [e.value for e in est], color="0.75", edgecolor="0.2", width=0.6)
            ax.errorbar(x, [e.value for e in est], yerr=[e.half_width for e in est],
                        fmt="none", ecolor="k", capsize=4, lw=1)
            ax.set_xticks(x, names)
            ax.set_title(_METRIC_LABELS[m])
        fig.tight_layout()
        return _save(fig, path)


def plot_silhouette(silhouette, path) -> Path:
    ks = sorted(k for k, v in silhouette.scores.items() if not np.isnan(v))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 2.8))
        ax.plot(ks, [silhouette.scores[k] for k in ks], "o-", color="k", lw=1, ms=4)
        if silhouette.chosen_k in ks:
            ax.axvline(silhouette.chosen_k, color="0.5", ls="--", lw=1)
        ax.set_xlabel("k")
        ax.set_ylabel("mean silhouette")
        ax.set_xticks(ks)
        fig.tight_layout()
        return _save(fig, path)


def plot_cup_weights(artifact, path, max_coords: int = 40) -> Path:
    """Heatmap of retained CUP weights over the most-used context coordinates."""
    cups = artifact.cups
    used = np.flatnonzero(cups.centers.sum(axis=0) > 0)
    order = used[np.argsort(-cups.centers[:, used].max(axis=0), kind="stable")][:max_coords]
    order = np.sort(order)
    labels = ["{}: {}".format(*artifact.schema.label(int(j))) for j in order]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(1.2 + 0.35 * len(cups), 1.0 + 0.18 * len(order)))
        im = ax.imshow(cups.centers[:, order].T, aspect="auto", cmap="Greys", vmin=0, vmax=1)
        ax.set_xticks(range(len(cups)), [str(c) for c in cups.cup_ids])
        ax.set_yticks(range(len(order)), labels)
        ax.set_xlabel("CUP")
        fig.colorbar(im, ax=ax, label="weight")
        return _save(fig, path)
