"""Minimal static SVG renderings (bar summary, loss contours)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "sopai"
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps the SVG bytes reproducible
_SVG_META = {"Date": None, "Creator": None}


def summary_bars(path, rows, role="transfer"):
    """Mean accuracy per sparsity, one bar group per method, pruned vs fine-tuned."""
    rows = [r for r in rows if r["role"] == role]
    methods = sorted({r["method"] for r in rows})
    sparsities = sorted({r["sparsity"] for r in rows if r["stage"] != "unpruned"})
    fig, axes = plt.subplots(1, max(1, len(methods)), figsize=(3.2 * max(1, len(methods)), 3), sharey=True,
                             squeeze=False)
    x = np.arange(len(sparsities))
    for ax, m in zip(axes[0], methods):
        for off, stage in ((-0.2, "pruned"), (0.2, "pruned_finetuned")):
            vals = {r["sparsity"]: r for r in rows if r["method"] == m and r["stage"] == stage}
            mean = [vals[s]["mean"] if s in vals else np.nan for s in sparsities]
            std = [vals[s]["std"] if s in vals else 0.0 for s in sparsities]
            ax.bar(x + off, mean, 0.4, yerr=std, label=stage)
        base = [r["mean"] for r in rows if r["method"] == m and r["stage"] == "unpruned"]
        if base:
            ax.axhline(base[0], color="k", lw=0.8, ls="--")
        ax.set_title(m)
        ax.set_xticks(x, [f"{s:g}" for s in sparsities], rotation=60, fontsize=7)
        ax.set_xlabel("sparsity %")
    axes[0][0].set_ylabel(f"{role} accuracy")
    axes[0][0].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)


def contour(path, proj, names=("source", "transfer"), title=""):
    fig, ax = plt.subplots(figsize=(4.5, 4))
    U, W = np.meshgrid(proj.grid_u, proj.grid_w)
    for name, color in zip(names, ("tab:blue", "tab:orange")):
        ax.contour(U, W, proj.grid_losses[name], levels=12, colors=color, linewidths=0.8)
    ax.plot(proj.coords[:, 0], proj.coords[:, 1], "k.-")
    for lab, (u, w) in zip(proj.labels, proj.coords):
        ax.annotate(lab, (u, w), fontsize=7)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)
