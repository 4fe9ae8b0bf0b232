"""Figure rendering for experiment reports (headless, files only)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

DPI = 150


def save_figure(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=DPI, bbox_inches="tight")
    plt.close(fig)
    return path


def spectrum_figure(eigenvalues, retained, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    idx = np.arange(1, len(eigenvalues) + 1)
    ev = np.asarray(eigenvalues, dtype=float)
    kept = np.asarray(retained, dtype=bool)
    floor = ev[kept].min() * 1e-3 if kept.any() else 1e-16
    ax.semilogy(idx[kept], ev[kept], "o", label="retained")
    if (~kept).any():
        ax.semilogy(idx[~kept], np.maximum(ev[~kept], floor), "x", label="null")
    ax.set_xlabel("mode")
    ax.set_ylabel("eigenvalue")
    ax.set_title("kernel spectrum")
    ax.legend()
    return save_figure(fig, path)


def regularization_figure(schedule, profiles: dict, path) -> Path:
    """Squared-norm profiles q_n per test vector over the level schedule."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for name, profile in profiles.items():
        ax.loglog(schedule, profile, marker=".", label=name)
    ax.set_xlabel("regularization level n")
    ax.set_ylabel("q_n")
    ax.set_title("generalized-inverse limits")
    ax.legend(fontsize=8)
    return save_figure(fig, path)


def paths_figure(times, paths, path, *, ylabel="X(t)", max_lines=8) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    for row in np.atleast_2d(paths)[:max_lines]:
        ax.plot(times, row, lw=0.9)
    ax.set_xlabel("t")
    ax.set_ylabel(ylabel)
    ax.set_title("sample paths")
    return save_figure(fig, path)


def isometry_figure(quadratic_variation, kernel_norms, path) -> Path:
    fig, ax = plt.subplots(figsize=(3.8, 3.8))
    ax.plot(quadratic_variation, kernel_norms, ".", ms=4)
    lo = 0.0
    hi = max(np.max(quadratic_variation), np.max(kernel_norms), 1e-12)
    ax.plot([lo, hi], [lo, hi], "k--", lw=0.8)
    ax.set_xlabel("[X,X](T)")
    ax.set_ylabel("cumulative kernel norm")
    ax.set_title("integral isometry")
    return save_figure(fig, path)


def loglog_decay_figure(step_sizes, values, path, *, ylabel, slope=None) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.loglog(step_sizes, values, "o-", label="measured")
    if slope is not None and np.all(np.asarray(values) > 0):
        ref = values[0] * (np.asarray(step_sizes) / step_sizes[0]) ** slope
        ax.loglog(step_sizes, ref, "k--", lw=0.8, label=f"slope {slope:g}")
        ax.legend()
    ax.set_xlabel("step size")
    ax.set_ylabel(ylabel)
    return save_figure(fig, path)


def deflator_figure(terminal_values, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.hist(terminal_values, bins=60, color="tab:blue", alpha=0.8)
    ax.axvline(1.0, color="k", lw=0.8, ls="--")
    ax.set_xlabel("Y(T)")
    ax.set_ylabel("paths")
    ax.set_title("terminal deflator")
    return save_figure(fig, path)


def tails_figure(ells, tails: dict, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ells = np.asarray(ells, dtype=float)
    for name, tail in tails.items():
        ax.plot(ells, tail, "o-", ms=4, label=name)
    ax.plot(ells, 1.0 / ells, "k--", lw=1.0, label="1/l envelope")
    ax.set_xlabel("level l")
    ax.set_ylabel("P[X(T) > l]")
    ax.set_title("wealth tails vs viability envelope")
    ax.legend(fontsize=8)
    return save_figure(fig, path)


def tree_figure(tree, node_values, path, *, value_name="value") -> Path:
    """Depth-layered tree diagram annotated with per-node values."""
    depth = tree.depth()
    children = tree.children()
    ys = np.zeros(tree.n_nodes)
    for d in range(int(depth.max()), -1, -1):
        level = np.flatnonzero(depth == d)
        for j, v in enumerate(level):
            kids = children[v]
            ys[v] = np.mean(ys[kids]) if len(kids) else float(j)
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    for v in range(1, tree.n_nodes):
        p = int(tree.parent[v])
        ax.plot([depth[p], depth[v]], [ys[p], ys[v]], "-", color="0.7", lw=0.8)
    ax.plot(depth, ys, "o", color="tab:blue", ms=5)
    for v in range(tree.n_nodes):
        ax.annotate(
            f"{node_values[v]:.4g}", (depth[v], ys[v]),
            textcoords="offset points", xytext=(4, 4), fontsize=7,
        )
    ax.set_xlabel("period")
    ax.set_yticks([])
    ax.set_title(f"tree {value_name}")
    return save_figure(fig, path)


def forward_curves_figure(times, maturities, forwards, path, *, n_curves=5) -> Path:
    """Forward curves of one path at a handful of observation times."""
    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    picks = np.unique(np.linspace(0, len(times) - 1, n_curves).astype(int))
    for k in picks:
        ax.plot(maturities, forwards[k], lw=0.9, label=f"t={times[k]:g}")
    ax.set_xlabel("maturity T")
    ax.set_ylabel("f(t;T)")
    ax.set_title("forward curve evolution (path 0)")
    ax.legend(fontsize=7)
    return save_figure(fig, path)


def zscores_figure(labels, zscores, path, *, band=3.0) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    x = np.arange(len(labels))
    ax.bar(x, zscores, color="tab:blue", width=0.6)
    ax.axhline(band, color="tab:red", lw=0.8, ls="--")
    ax.axhline(-band, color="tab:red", lw=0.8, ls="--")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("z")
    ax.set_title("martingale test z-scores")
    return save_figure(fig, path)
