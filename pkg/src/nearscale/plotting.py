"""Figures written next to the CSV outputs of the CLI."""

from __future__ import annotations

import json

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "svg.hashsalt": "nearscale",
}


def _save(fig, path, config=None):
    # fixed metadata keeps repeated runs byte-identical
    if str(path).endswith(".png"):
        meta = {"Software": None}
        if config is not None:
            meta["Description"] = json.dumps(config, sort_keys=True)
    else:
        meta = {"Date": None}
    fig.savefig(path, bbox_inches="tight", metadata=meta)
    plt.close(fig)


def plot_sweep(rows, path, config=None):
    """Mean scale error against surface distance, one-sigma error bars.

    ``rows`` are (distance_mm, mean_err_pct, std_err_pct).
    """
    rows = np.asarray(rows, dtype=float).reshape(-1, 3)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 2.6))
        ax.errorbar(rows[:, 0], rows[:, 1], yerr=rows[:, 2], fmt="o-", capsize=3, lw=1.2, ms=4)
        ax.set_xlabel("distance to surface [mm]")
        ax.set_ylabel("scale error [%]")
        ax.set_ylim(bottom=0)
        ax.grid(alpha=0.3)
        _save(fig, path, config)


def plot_profile(profiles, path, truth=None, config=None):
    """Robust cost against trial scale, normalised to each curve's minimum.

    ``profiles`` maps a label to a sequence of (lambda, cost).
    """
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 2.6))
        for label, prof in profiles.items():
            prof = np.asarray(prof, dtype=float)
            ax.plot(prof[:, 0], prof[:, 1] / prof[:, 1].min(), lw=1.2, label=label)
        if truth is not None:
            ax.axvline(truth, color="k", ls="--", lw=0.8)
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("trial scale")
        ax.set_ylabel("cost / min cost")
        if len(profiles) > 1:
            ax.legend(frameon=False)
        _save(fig, path, config)


def plot_ablation(labels, errors, path, config=None):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 2.6))
        x = np.arange(len(labels))
        ax.bar(x, errors, color="0.5")
        ax.set_xticks(x, labels, rotation=20)
        ax.set_ylabel("mean scale error [%]")
        _save(fig, path, config)
