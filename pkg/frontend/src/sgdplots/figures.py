"""Figure generation from benchmark CSVs.

Consumes exactly the aggregated sweep schemas written by asyncsgd-bench
(a `#` comment line, a header row, then data) and renders two figure
families: optimality-gap curves per core count (log-scale gap axis with
standard-error bands) and speedup-versus-cores lines with the synchronized
comparator and an ideal-linear reference.

Rendering is deterministic: a fixed style, the Agg backend, and stripped
date metadata, so repeated runs on the same input produce identical bytes.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["FigureSpec", "plot_gap_curves", "plot_speedup",
           "build_gap_figure", "build_speedup_figure", "read_csv_rows"]

STYLE = {
    "figure.figsize": (5.0, 3.75),
    "figure.dpi": 120,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "sgdplots",
}

SERIES_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                 "#8c564b"]

GAP_HEADER = ["cores", "epoch", "gap_mean", "gap_stderr"]
SPEEDUP_REQUIRED = ["cores", "async_speedup_mean", "async_speedup_stderr"]
SYNC_COLUMNS = ["sync_speedup_mean", "sync_speedup_stderr"]


@dataclass
class FigureSpec:
    """Inputs and options for one rendered figure."""

    inputs: list
    kind: str
    output: str
    log_gap_axis: bool = True
    title: str = ""

    def __post_init__(self):
        if self.kind not in ("gap_curves", "speedup"):
            raise ValueError("kind must be 'gap_curves' or 'speedup'")
        if not self.inputs:
            raise ValueError("at least one input CSV is required")


def read_csv_rows(path):
    """(header, rows) skipping leading # comment lines."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    rows = list(csv.reader(lines))
    if not rows:
        raise ValueError(f"{path}: empty CSV (no header)")
    return rows[0], rows[1:]


def _save(fig, output: str) -> None:
    ext = os.path.splitext(output)[1].lower()
    metadata = {"Date": None} if ext == ".svg" else {}
    with plt.rc_context(STYLE):  # svg.hashsalt is read at save time
        fig.savefig(output, metadata=metadata)
    plt.close(fig)


def build_gap_figure(spec: FigureSpec):
    """Figure object for gap curves (one line per core count, stderr band)."""
    if spec.kind != "gap_curves":
        raise ValueError("spec.kind must be 'gap_curves'")
    series: dict = {}
    for path in spec.inputs:
        header, rows = read_csv_rows(path)
        if header != GAP_HEADER:
            raise ValueError(f"{path}: expected header {GAP_HEADER}, got {header}")
        if not rows:
            raise ValueError(f"{path}: no data rows")
        for r in rows:
            cores = int(r[0])
            series.setdefault(cores, []).append(
                (int(r[1]), float(r[2]), float(r[3])))

    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for i, cores in enumerate(sorted(series)):
            pts = sorted(series[cores])
            epochs = np.array([p[0] for p in pts]) + 1
            mean = np.array([p[1] for p in pts])
            se = np.array([p[2] for p in pts])
            color = SERIES_COLORS[i % len(SERIES_COLORS)]
            ax.plot(epochs, mean, color=color, marker="o", markersize=2.5,
                    linewidth=1.2, label=f"{cores} core{'s' if cores > 1 else ''}")
            ax.fill_between(epochs, mean - se, mean + se, color=color, alpha=0.2)
        if spec.log_gap_axis:
            ax.set_yscale("log")
        ax.set_xlabel("epoch")
        ax.set_ylabel("optimality gap")
        if spec.title:
            ax.set_title(spec.title)
        ax.legend()
        fig.tight_layout()
    return fig


def plot_gap_curves(spec: FigureSpec) -> str:
    """Render gap curves to spec.output (log gap axis by default)."""
    _save(build_gap_figure(spec), spec.output)
    return spec.output


def build_speedup_figure(spec: FigureSpec):
    """Figure object for speedup versus cores.

    Inputs missing the synchronized-comparator columns plot the async
    series only and emit a warning.  An ideal-linear reference line is
    always drawn.
    """
    if spec.kind != "speedup":
        raise ValueError("spec.kind must be 'speedup'")
    import warnings

    rows_all = []
    have_sync = True
    for path in spec.inputs:
        header, rows = read_csv_rows(path)
        missing = [c for c in SPEEDUP_REQUIRED if c not in header]
        if missing:
            raise ValueError(f"{path}: missing required columns {missing}")
        if not rows:
            raise ValueError(f"{path}: no data rows")
        if any(c not in header for c in SYNC_COLUMNS):
            have_sync = False
        idx = {c: header.index(c) for c in header}
        for r in rows:
            rows_all.append((int(r[idx["cores"]]),
                             float(r[idx["async_speedup_mean"]]),
                             float(r[idx["async_speedup_stderr"]]),
                             float(r[idx["sync_speedup_mean"]]) if have_sync else None,
                             float(r[idx["sync_speedup_stderr"]]) if have_sync else None))
    if not have_sync:
        warnings.warn("synchronized-comparator columns absent; plotting the "
                      "asynchronous series only")

    rows_all.sort()
    cores = np.array([r[0] for r in rows_all])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(cores, cores, color="#999999", linestyle="--", linewidth=1.0,
                label="ideal linear")
        ax.errorbar(cores, [r[1] for r in rows_all],
                    yerr=[r[2] for r in rows_all], color=SERIES_COLORS[0],
                    marker="o", markersize=3, linewidth=1.2, capsize=2,
                    label="lock-free async")
        if have_sync:
            ax.errorbar(cores, [r[3] for r in rows_all],
                        yerr=[r[4] for r in rows_all], color=SERIES_COLORS[1],
                        marker="s", markersize=3, linewidth=1.2, capsize=2,
                        label="synchronized averaging")
        ax.set_xlabel("cores")
        ax.set_ylabel("speedup")
        ax.set_xticks(cores.tolist())
        if spec.title:
            ax.set_title(spec.title)
        ax.legend()
        fig.tight_layout()
    return fig


def plot_speedup(spec: FigureSpec) -> str:
    """Render the speedup figure to spec.output."""
    _save(build_speedup_figure(spec), spec.output)
    return spec.output
