"""Suite-level summary figures rendered next to the delimited outputs.

One PNG per run: verdict counts on the left, per-sample in-region activation
fractions against the threshold line on the right. The figure is a review
aid; the machine-readable truth stays in report.json and verdicts.csv.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")  # render headless; no display is ever assumed

import matplotlib.pyplot as plt

__all__ = ["render_suite_figures"]

_STATUS_COLORS = {"PASS": "#2a9d3c", "FAIL": "#c3342b", "INCONCLUSIVE": "#b08c1a"}


def render_suite_figures(report, output_dir: str, filename: str = "summary.png") -> str:
    """Write the verdict/overlap summary figure; returns the file path."""
    verdicts = report.verdicts
    fig, (ax_counts, ax_overlap) = plt.subplots(
        1, 2, figsize=(11, 4.2), gridspec_kw={"width_ratios": [1, 2]}
    )

    statuses = ["PASS", "FAIL", "INCONCLUSIVE"]
    counts = [report.counts[s] for s in statuses]
    bars = ax_counts.bar(statuses, counts, color=[_STATUS_COLORS[s] for s in statuses])
    ax_counts.bar_label(bars)
    ax_counts.set_ylabel("samples")
    ax_counts.set_title(
        f"verdicts (accuracy {report.accuracy:.1%}, exit {report.exit_status})"
    )
    ax_counts.set_ylim(0, max(counts + [1]) * 1.25)

    scored = [(v.sample_id, v.overlap_score, v.status) for v in verdicts if v.overlap_score is not None]
    if scored:
        xs = range(len(scored))
        ax_overlap.bar(
            xs,
            [s[1] for s in scored],
            color=[_STATUS_COLORS[s[2]] for s in scored],
        )
        ax_overlap.set_xticks(list(xs))
        ax_overlap.set_xticklabels([s[0] for s in scored], rotation=45, ha="right", fontsize=8)
        threshold = report.config.get("threshold")
        if isinstance(threshold, (int, float)):
            ax_overlap.axhline(threshold, color="#333333", linestyle="--", linewidth=1)
            ax_overlap.text(
                len(scored) - 0.5, threshold, f" threshold {threshold}", va="bottom",
                ha="right", fontsize=8,
            )
        ax_overlap.set_ylim(0, 1.05)
        ax_overlap.set_ylabel("in-region activation fraction")
        ax_overlap.set_title("overlap per sample")
    else:
        ax_overlap.axis("off")
        ax_overlap.text(0.5, 0.5, "no overlap-scored samples", ha="center", va="center")

    fig.tight_layout()
    path = os.path.join(output_dir, filename)
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
