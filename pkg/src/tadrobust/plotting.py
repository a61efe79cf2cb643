"""Bar and line charts for reports, written as byte-stable SVG files."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.2),
    "font.size": 9,
    "axes.linewidth": 0.6,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "axes.axisbelow": True,
    "grid.linewidth": 0.4,
    "grid.alpha": 0.5,
    "lines.linewidth": 1.4,
    "svg.fonttype": "none",  # keep text as text; no embedded glyph paths
    "svg.hashsalt": "tadrobust",
}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # no date and a fixed id salt so reruns are byte-identical
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def bar_chart(
    labels: Sequence[str],
    values: Sequence[float],
    path: str | Path,
    title: str = "",
    ylabel: str = "",
    reference: float | None = None,
) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        xs = range(len(labels))
        ax.bar(xs, values, color="#4c72b0", width=0.7)
        if reference is not None:
            ax.axhline(reference, color="#c44e52", linestyle="--", linewidth=1.0)
        ax.set_xticks(list(xs))
        ax.set_xticklabels(labels, rotation=45 if len(labels) > 6 else 0, ha="right" if len(labels) > 6 else "center")
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)


def line_chart(
    xs: Sequence[float],
    ys: Sequence[float],
    path: str | Path,
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    reference: float | None = None,
    reference_label: str = "clean",
) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(xs, ys, marker="o", markersize=3.5, color="#4c72b0", label="corrupted")
        if reference is not None:
            ax.axhline(reference, color="#c44e52", linestyle="--", linewidth=1.0, label=reference_label)
            ax.legend(frameon=False)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)
