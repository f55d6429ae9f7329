"""Matplotlib renderings of the report tables, written next to their CSVs.

Figures use the Agg backend, a fixed style and no timestamp metadata so the
same data always produces byte-identical PNGs.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.4,
    "lines.markersize": 5,
    "savefig.dpi": 120,
    "figure.dpi": 120,
}
FIG_SIZE = (5.0, 3.4)
MARKERS = ("o", "s", "^", "D", "v", "P", "X")


def _save(fig, path):
    # PNG metadata would otherwise embed the matplotlib version string
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_pair_lines(path, line_data, title="Binary age-pair accuracy"):
    """Accuracy (%) against comparison month, one line per anchor month."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=FIG_SIZE)
        anchors = sorted({a for a, _, _ in line_data})
        for i, anchor in enumerate(anchors):
            pts = sorted((b, acc) for a, b, acc in line_data if a == anchor)
            xs = [b for b, _ in pts]
            ys = [100.0 * acc for _, acc in pts]
            ax.plot(xs, ys, marker=MARKERS[i % len(MARKERS)], label=f"month {anchor} vs")
        ax.set_xlabel("comparison month")
        ax.set_ylabel("accuracy (%)")
        ax.set_xticks(range(0, 7))
        ax.set_title(title)
        ax.grid(alpha=0.3)
        if anchors:
            ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_gender_lines(path, male_lines, female_lines):
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(8.0, 3.2), sharey=True)
        for ax, lines, name in zip(axes, (male_lines, female_lines), ("male", "female")):
            for i, anchor in enumerate(sorted({a for a, _, _ in lines})):
                pts = sorted((b, acc) for a, b, acc in lines if a == anchor)
                ax.plot([b for b, _ in pts], [100.0 * y for _, y in pts],
                        marker=MARKERS[i % len(MARKERS)], label=f"month {anchor} vs")
            ax.set_title(name)
            ax.set_xlabel("comparison month")
            ax.set_xticks(range(0, 7))
            ax.grid(alpha=0.3)
        axes[0].set_ylabel("accuracy (%)")
        axes[0].legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_diagnosis(path, cohorts):
    """Bars of the share judged younger and the share judged correctly per cohort.

    ``cohorts`` is a sequence of (name, n, fraction_younger, fraction_correct);
    cohorts with no clips are drawn as empty slots.
    """
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=FIG_SIZE)
        x = np.arange(len(cohorts))
        younger = [np.nan if fy is None else 100.0 * fy for _, _, fy, _ in cohorts]
        correct = [np.nan if fc is None else 100.0 * fc for _, _, _, fc in cohorts]
        ax.bar(x - 0.2, younger, width=0.4, label="judged younger", color="0.55")
        ax.bar(x + 0.2, correct, width=0.4, label="judged correctly", color="0.2")
        ax.set_xticks(x)
        ax.set_xticklabels([f"{name}\n(n={n})" for name, n, _, _ in cohorts])
        ax.set_ylim(0, 100)
        ax.set_ylabel("share of clips (%)")
        ax.legend(frameon=False, loc="lower right")
        fig.tight_layout()
        return _save(fig, path)


def plot_scatter(path, stats, max_points=4000):
    """F1 against F2 per group, with the group mean marked.

    ``stats`` maps a group label to a GroupStats; each group shows at most
    ``max_points`` evenly strided frames to keep the file small.
    """
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.6, 4.0))
        for i, (label, st) in enumerate(stats.items()):
            pts = st.points[:: max(1, int(np.ceil(len(st.points) / max_points)))]
            sc = ax.scatter(pts[:, 1], pts[:, 0], s=3, alpha=0.25, marker=MARKERS[i % len(MARKERS)],
                            label=str(label), rasterized=True)
            ax.plot(st.f2_mean, st.f1_mean, marker="x", markersize=9, mew=2, color=sc.get_facecolor()[0][:3])
        ax.set_xlabel("F2 (Hz)")
        ax.set_ylabel("F1 (Hz)")
        ax.legend(frameon=False, markerscale=3)
        fig.tight_layout()
        return _save(fig, path)


def plot_history(path, history):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=FIG_SIZE)
        epochs = [h.epoch for h in history]
        ax.plot(epochs, [h.loss for h in history], label="loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("training loss")
        ax2 = ax.twinx()
        ax2.plot(epochs, [h.train_acc for h in history], color="0.5", linestyle="--", label="accuracy")
        ax2.set_ylabel("training accuracy")
        ax2.set_ylim(0, 1.02)
        ax2.spines["right"].set_visible(True)
        fig.tight_layout()
        return _save(fig, path)
