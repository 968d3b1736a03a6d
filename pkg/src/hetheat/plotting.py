"""Standalone SVG line plots."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed salt so element ids, and hence the file bytes, are reproducible
matplotlib.rcParams["svg.hashsalt"] = "hetheat"

KINDS = ("loglog", "line")


def emit_plot(
    series: Mapping[str, tuple[Sequence[float], Sequence[float]]],
    kind: str,
    path,
    title: str = "",
    xlabel: str = "x",
    ylabel: str = "y",
    description: str = "",
) -> Path:
    """Write ``series`` (label -> (x, y)) as an SVG 1.1 file.

    ``loglog`` plots annotate each series having two or more points with its
    least-squares slope in log-log coordinates.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    if not series or all(len(xy[0]) == 0 for xy in series.values()):
        raise ValueError("series is empty")
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    try:
        for label, (x, y) in series.items():
            x = np.asarray(x, dtype=float)
            y = np.asarray(y, dtype=float)
            if x.shape != y.shape:
                raise ValueError(f"series {label!r}: x and y lengths differ")
            if x.size == 0:
                continue
            text = label
            if kind == "loglog" and x.size >= 2:
                slope = np.polyfit(np.log(x), np.log(y), 1)[0]
                text = f"{label} (slope {slope:.3f})"
            ax.plot(x, y, marker="o", label=text)
        if kind == "loglog":
            ax.set_xscale("log")
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        ax.legend(fontsize="small")
        fig.tight_layout()
        meta = {"Date": None, "Creator": "hetheat"}
        if description:
            meta["Description"] = description
        fig.savefig(path, format="svg", metadata=meta)
    finally:
        plt.close(fig)
    return path
