"""Report rendering: matplotlib figures written next to delimited output."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(payload, f, indent=1)
    return path


def write_csv(path, rows, header):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def robustness_figure(curve, path):
    """Dice vs misalignment angle, registered and no-registration baseline."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(curve["angles"], curve["dice"], "o-", label="registered")
    ax.plot(curve["angles"], curve["baseline_dice"], "s--", color="gray", label="no registration")
    ax.set_xlabel("misalignment rotation (deg)")
    ax.set_ylabel("mean Dice")
    ax.set_ylim(0, 1)
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def lambda_sweep_figure(lambdas, per_label_dice, path):
    """Per-label Dice vs lambda on a log x-axis, argmax starred per label."""
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [max(l, 1e-5) for l in lambdas]  # keep lambda = 0 plottable on log axis
    for label, series in sorted(per_label_dice.items()):
        line, = ax.plot(xs, series, "o-", label=f"label {label}")
        best = int(np.argmax(series))
        ax.plot(xs[best], series[best], "*", markersize=16, color=line.get_color())
    ax.set_xscale("log")
    ax.set_xlabel("lambda")
    ax.set_ylabel("Dice")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def discriminability_figure(matrix, path):
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(np.log10(np.maximum(matrix, 1e-12)), cmap="viridis")
    fig.colorbar(im, ax=ax, label="log10 keypoint MSE")
    ax.set_xlabel("registered subject")
    ax.set_ylabel("reference subject")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def loss_trace_figure(trace, path, window=25):
    fig, ax = plt.subplots(figsize=(6, 4))
    trace = np.asarray(trace, dtype=np.float64)
    ax.plot(trace, alpha=0.3, label="per step")
    if len(trace) >= window:
        smooth = np.convolve(trace, np.ones(window) / window, mode="valid")
        ax.plot(np.arange(len(smooth)) + window - 1, smooth, label=f"{window}-step mean")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)
