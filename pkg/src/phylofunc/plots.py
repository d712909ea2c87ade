"""Figure rendering for the command line report paths.

Every function writes a PNG next to the delimited outputs and returns
the path.  Rendering is headless; no interactive backend is touched.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .reconstruct import FunctionValuedPosterior
from .simulate import BasisSet, FunctionalDataset
from .trees import Phylogeny

_DPI = 150


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def save_basis_figure(basis: BasisSet, path, title="basis curves"):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for row, name in zip(basis.functions, basis.names):
        ax.plot(basis.grid, row, label=name)
    ax.set_xlabel("x")
    ax.set_ylabel("value")
    ax.set_title(title)
    ax.legend(fontsize=8)
    return _finish(fig, path)


def save_dataset_figure(data: FunctionalDataset, path):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    lo = np.percentile(data.traits, 5, axis=0)
    hi = np.percentile(data.traits, 95, axis=0)
    ax.fill_between(data.grid, lo, hi, alpha=0.25, label="5th-95th percentile")
    step = max(1, data.n // 12)
    for row in data.traits[::step]:
        ax.plot(data.grid, row, lw=0.6, alpha=0.6)
    ax.set_xlabel("x")
    ax.set_ylabel("trait")
    ax.set_title(f"observed curves (n={data.n})")
    ax.legend(fontsize=8)
    return _finish(fig, path)


def save_decomposition_figure(pca_components: np.ndarray, basis_hat: BasisSet, path,
                              reference: BasisSet | None = None):
    """Principal directions beside the rotated basis estimate."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5), sharey=False)
    grid = basis_hat.grid
    for i, row in enumerate(pca_components):
        axes[0].plot(grid, row, label=f"pc_{i + 1}")
    axes[0].set_title("principal directions")
    for i, row in enumerate(basis_hat.functions):
        axes[1].plot(grid, row, label=f"ic_{i + 1}")
    if reference is not None:
        norms = np.linalg.norm(reference.functions, axis=1, keepdims=True)
        for row in reference.functions / norms:
            axes[1].plot(grid, row, color="gray", lw=0.8, ls="--")
    axes[1].set_title("rotated basis estimate")
    for ax in axes:
        ax.set_xlabel("x")
        ax.legend(fontsize=7)
    return _finish(fig, path)


def save_bag_estimates_figure(estimates, path):
    """Per-bag parameter clouds for each fitted row."""
    names = ("sigma_f", "ell", "sigma_n")
    fig, axes = plt.subplots(1, 3, figsize=(10, 3))
    for j, name in enumerate(names):
        ax = axes[j]
        for i, est in enumerate(estimates):
            vals = [getattr(g, name) for g in est.per_bag]
            if not vals:
                continue
            x = np.full(len(vals), i + 1, dtype=float)
            x += np.linspace(-0.15, 0.15, len(vals))
            ax.plot(x, vals, ".", ms=3, alpha=0.5)
            ax.plot(i + 1, getattr(est.gamma_hat, name), "k_", ms=14)
        ax.set_title(name)
        ax.set_xlabel("row")
        ax.set_xticks(range(1, len(estimates) + 1))
    return _finish(fig, path)


def save_posterior_figure(post: FunctionValuedPosterior, path,
                          truth: np.ndarray | None = None):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    sd = np.sqrt(np.clip(post.phylo_var, 0.0, None))
    ax.fill_between(post.grid, post.mean - 2 * sd, post.mean + 2 * sd,
                    alpha=0.3, label="heritable 2 sd")
    if post.nonphylo_var is not None:
        total = np.sqrt(np.clip(post.phylo_var + post.nonphylo_var, 0.0, None))
        ax.plot(post.grid, post.mean + 2 * total, lw=0.7, ls=":", color="C0")
        ax.plot(post.grid, post.mean - 2 * total, lw=0.7, ls=":", color="C0",
                label="with tip noise")
    ax.plot(post.grid, post.mean, label="posterior mean")
    if truth is not None:
        ax.plot(post.grid, truth, color="k", lw=1, ls="--", label="truth")
    ax.set_xlabel("x")
    ax.set_ylabel("trait")
    ax.set_title(f"reconstruction at {post.node}")
    ax.legend(fontsize=8)
    return _finish(fig, path)


def save_robustness_figure(frame, path):
    """Relative error distributions across randomized runs."""
    cols = [("sigma_f_rel_err", "sigma_f"), ("ell_rel_err", "ell"),
            ("sigma_n_rel_err", "sigma_n")]
    fig, axes = plt.subplots(1, 3, figsize=(10, 3))
    for ax, (col, name) in zip(axes, cols):
        vals = frame[col].dropna().to_numpy()
        if vals.size:
            ax.hist(vals, bins=21, color="C0", alpha=0.8)
            ax.axvline(float(np.median(vals)), color="k", lw=1)
        ax.axvline(0.0, color="r", lw=0.8, ls="--")
        ax.set_title(f"{name} relative error")
    return _finish(fig, path)


def save_tree_figure(t: Phylogeny, path):
    """Rectangular cladogram, tips on the right."""
    y = np.zeros(t.n_nodes)
    next_y = 0.0
    for node in t.preorder()[::-1]:
        node = int(node)
        kids = t.children(node)
        if not kids:
            y[node] = next_y
            next_y += 1.0
        else:
            y[node] = np.mean([y[c] for c in kids])
    x = t.root_distance
    fig, ax = plt.subplots(figsize=(6, max(3.0, 0.06 * t.n_tips)))
    for node in range(t.n_nodes):
        if node == t.root:
            continue
        p = int(t.parent[node])
        ax.plot([x[p], x[node]], [y[node], y[node]], color="k", lw=0.8)
        ax.plot([x[p], x[p]], [y[p], y[node]], color="k", lw=0.8)
    if t.n_tips <= 64:
        for tip in t.tips:
            ax.text(x[tip], y[tip], " " + t.labels[int(tip)], fontsize=6, va="center")
    ax.set_xlabel("distance from root")
    ax.set_yticks([])
    return _finish(fig, path)
