"""SVG convergence plots from ensemble summaries."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.fonttype"] = "none"
# fixed salt + no embedded date: identical inputs give byte-identical SVG
matplotlib.rcParams["svg.hashsalt"] = "dsgdlab"

import matplotlib.pyplot as plt
import numpy as np

from .errors import NothingToPlot
from .metrics import METRIC_NAMES


def emit_plot(summaries: dict, path, metric: str = "grad_norm_sq", title: str = "") -> None:
    """Render mean curves with confidence bands on a log-scale y axis.

    ``summaries`` maps a legend label to an :class:`EnsembleSummary`.  Points
    that are non-finite or non-positive (unplottable on a log axis) are
    dropped, and a note is added to the figure when that happens.
    """
    if metric not in METRIC_NAMES:
        raise ValueError(f"unknown metric {metric!r}")
    if not summaries:
        raise NothingToPlot("no summaries supplied")

    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    dropped_any = False
    plotted = 0
    for label, summary in summaries.items():
        t = np.asarray(summary.t, dtype=float)
        mean = np.asarray(summary.mean[metric], dtype=float)
        ci = np.asarray(summary.ci[metric], dtype=float)
        keep = np.isfinite(mean) & (mean > 0.0)
        if not keep.all():
            dropped_any = True
        if not keep.any():
            continue
        t, mean, ci = t[keep], mean[keep], ci[keep]
        (line,) = ax.plot(t, mean, label=label, linewidth=1.2)
        lower = np.maximum(mean - ci, np.finfo(float).tiny)
        ax.fill_between(t, lower, mean + ci, alpha=0.25, color=line.get_color(), linewidth=0)
        plotted += 1
    if plotted == 0:
        plt.close(fig)
        raise NothingToPlot(f"no finite positive values of {metric!r} to plot")

    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel(metric)
    if title:
        ax.set_title(title)
    ax.legend()
    if dropped_any:
        fig.text(
            0.99,
            0.01,
            "non-finite or non-positive points omitted",
            ha="right",
            va="bottom",
            fontsize=7,
            color="0.4",
        )
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
