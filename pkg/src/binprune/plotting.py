"""Figures written next to the CSV/JSON reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.dpi": 120,
    "svg.hashsalt": "binprune",
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None} if str(path).endswith(".png") else None)
    plt.close(fig)
    return path


def plot_sweep(rows, path):
    """Total error and binarization difficulty against the kept ratio."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        labels = [r.ratio for r in rows]
        x = np.arange(len(rows))
        l2 = np.array([r.l2_total for r in rows])
        ax.plot(x, l2, "o-", color="C0", label="total error L2")
        best = int(np.argmin(l2))
        ax.plot(x[best], l2[best], "*", color="C3", ms=12, label="minimum")
        ax.set_xticks(x, labels)
        ax.set_xlabel("N:M")
        ax.set_ylabel("L2")
        ax2 = ax.twinx()
        ax2.plot(x, [r.bd for r in rows], "s--", color="C1", label="BD (kept weights)")
        ax2.set_ylabel("BD")
        ax2.grid(False)
        handles = ax.get_legend_handles_labels()[0] + ax2.get_legend_handles_labels()[0]
        ax.legend(handles, [h.get_label() for h in handles], fontsize=7, loc="best")
        return _save(fig, path)


def plot_layer_errors(report, path):
    with plt.rc_context(STYLE):
        layers = report["layers"]
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        x = np.arange(len(layers))
        ax.bar(x - 0.2, [l["l1"] for l in layers], 0.4, label="L1 (weights)")
        ax.bar(x + 0.2, [l["l2"] for l in layers], 0.4, label="L2 (outputs)")
        ax.set_yscale("log")
        ax.set_xticks(x, [f'{l["name"]}\nN={l["n_i"]}' for l in layers])
        ax.set_ylabel("squared error")
        ax.legend(fontsize=7)
        return _save(fig, path)


def plot_bd_scatter(bd, err, rho, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 3.2))
        ax.scatter(bd, err, s=12, alpha=0.8)
        ax.set_xlabel("BD score")
        ax.set_ylabel("binarization error L1")
        ax.set_title(f"Spearman rho = {rho:.3f}", fontsize=9)
        return _save(fig, path)
