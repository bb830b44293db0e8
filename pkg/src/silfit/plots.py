"""Matplotlib figures written next to the delimited outputs.

Figures are a convenience layer for eyeballing runs; the CSV files remain
the canonical record. PNGs are written without a date stamp so identical
runs produce identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_SAVE_KWARGS = {"dpi": 120, "metadata": {"Software": "silfit"}}


def save_trace_figure(report, path):
    """Loss components over iterations, with the chamfer trace when present."""
    iters = np.arange(report.iterations_run)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(iters, report.totals, label="total", lw=1.2)
    ax.plot(iters, report.bces, label="bce", lw=1.0)
    if np.any(report.affinities != 0.0):
        ax.plot(iters, report.affinities, label="affinity", lw=1.0)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    if np.any(np.isfinite(report.chamfers)):
        twin = ax.twinx()
        twin.plot(iters, report.chamfers, color="tab:red", lw=1.0, label="chamfer")
        twin.set_ylabel("chamfer", color="tab:red")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def save_sweep_figure(axis_name, values, metrics: dict, path):
    """One line per metric against the sweep axis."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for name, series in metrics.items():
        ax.plot(values, series, marker="o", lw=1.2, label=name)
    ax.set_xlabel(axis_name)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def save_mask_figure(mask, path, title=None):
    fig, ax = plt.subplots(figsize=(4.0, 4.0))
    ax.imshow(np.asarray(mask), cmap="gray", vmin=0.0, vmax=1.0, interpolation="nearest")
    if title:
        ax.set_title(title, fontsize=9)
    ax.set_axis_off()
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
