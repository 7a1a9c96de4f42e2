"""Deterministic SVG line charts of mean curves with standard-error bands."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


@dataclass(frozen=True)
class Curve:
    label: str
    x: np.ndarray
    mean: np.ndarray
    sem: np.ndarray | None = None


def emit_plot(curves: Sequence[Curve], path: str | Path, title: str = "", xlabel: str = "iteration",
              ylabel: str = "") -> Path:
    """Write an SVG with one mean line per curve and a shaded band of +-1 SEM.

    Output bytes depend only on the inputs: ids are salted with a constant
    and no creation date is embedded. Each line is grouped under the id
    ``curve-<i>`` in the SVG.
    """
    if not curves:
        raise ValueError("no curves to plot")
    for c in curves:
        if len(c.x) == 0 or len(c.x) != len(c.mean):
            raise ValueError(f"curve {c.label!r} is empty or has mismatched lengths")
    path = Path(path)
    style = {"svg.hashsalt": "tegta", "svg.fonttype": "path", "font.size": 9}
    with plt.rc_context(style):
        fig, ax = plt.subplots(figsize=(5.0, 3.4))
        for i, c in enumerate(curves):
            color = PALETTE[i % len(PALETTE)]
            x = np.asarray(c.x, dtype=float)
            y = np.asarray(c.mean, dtype=float)
            if c.sem is not None:
                s = np.nan_to_num(np.asarray(c.sem, dtype=float))
                band = ax.fill_between(x, y - s, y + s, color=color, alpha=0.2, linewidth=0)
                band.set_gid(f"band-{i}")
            (line,) = ax.plot(x, y, color=color, linewidth=1.5, label=c.label)
            line.set_gid(f"curve-{i}")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        ax.grid(True, linewidth=0.4, alpha=0.5)
        ax.legend(frameon=False)
        fig.tight_layout()
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path


def curves_from_summary(path: str | Path, metric: str, experiment: str | None = None) -> list[Curve]:
    """Read mean/SEM curves for ``metric`` from a summary CSV."""
    series: dict[str, list[tuple[int, float, float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if row["metric"] != metric or (experiment is not None and row["experiment"] != experiment):
                continue
            series.setdefault(curve_label(row["model"], row["obs_events"]), []).append(
                (int(row["iteration"]), float(row["mean"]), float(row["sem"])))
    out = []
    for label, rows in series.items():
        rows.sort()
        arr = np.array(rows, dtype=float)
        out.append(Curve(label, arr[:, 0], arr[:, 1], arr[:, 2]))
    return out


def curve_label(model: str, obs_events: str | int | None) -> str:
    if model == "nf" or obs_events in (None, ""):
        return model.upper()
    return f"{model.upper()} ({obs_events} event{'s' if str(obs_events) != '1' else ''})"
