"""Report figures, rendered headless to PNG files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# Fixed metadata keeps PNG bytes identical across runs.
_PNG_META = {"Software": None}

_RC = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
}


def _save(fig, path):
    fig.savefig(path, format="png", metadata=_PNG_META)
    plt.close(fig)


def plot_calibration(reports: dict, path, min_count: int = 500):
    """One panel per model: calibration ratio against similarity bucket."""
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, len(reports), figsize=(4.2 * len(reports), 3.2),
                                 sharey=True, squeeze=False)
        for ax, (name, rep) in zip(axes[0], reports.items()):
            idx = rep.populated(min_count)
            mids = [(rep.edges[i] + rep.edges[i + 1]) / 2 for i in idx]
            cals = [rep.calibration[i] for i in idx]
            ax.axhline(1.0, color="0.6", lw=0.8, ls="--")
            ax.plot(mids, cals, marker="o", ms=3, lw=1.2)
            ax.set_title(name)
            ax.set_xlabel("similarity to previous items")
        axes[0][0].set_ylabel("calibration (sum pred / sum label)")
        fig.tight_layout()
        _save(fig, path)


def plot_ne_progression(days, improvement_pct, path):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        ax.axhline(0.0, color="0.6", lw=0.8)
        ax.plot(days, improvement_pct, marker="o", ms=3)
        ax.set_xlabel("training day")
        ax.set_ylabel("NE improvement over baseline (%)")
        fig.tight_layout()
        _save(fig, path)


def plot_ranker_comparison(report: dict, path):
    names = list(report["rankers"])
    segs = ("insensitive", "sensitive")
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.8, 3.0))
        width = 0.8 / len(segs)
        for j, seg in enumerate(segs):
            vals = [report["rankers"][n]["segments"].get(seg, {}).get("mean_engagement", 0.0)
                    for n in names]
            ax.bar([i + j * width for i in range(len(names))], vals, width, label=seg)
        ax.set_xticks([i + width * (len(segs) - 1) / 2 for i in range(len(names))])
        ax.set_xticklabels(names)
        ax.set_ylabel("expected engagements per slate")
        lo = min(e["mean_engagement"] for e in report["rankers"].values())
        ax.set_ylim(bottom=lo * 0.9)
        ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)
