"""Figure rendering for the study outputs.

Every function takes data already computed elsewhere and writes one PNG;
nothing here affects numbers. The Agg backend is forced so rendering
works headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = [
    "render_rmse_cdf",
    "render_equity",
    "render_solver_trace",
    "render_loglik",
]

_KINDS = (("pos", 0, "Position"), ("vel", 1, "Velocity"))


def render_rmse_cdf(table, path) -> str:
    """Empirical CDFs of the per-step RMSE differences, one panel for
    position and one for velocity, one curve per (pair, radius)."""
    fig, axes = plt.subplots(1, 2, figsize=(11, 4.5), sharey=True)
    keys = sorted(table.diffs)
    radii = sorted({eps for _, eps in keys})
    cmap = plt.get_cmap("viridis")
    styles = {"cot-em": "-", "ot-em": "--"}
    for (pair, eps) in keys:
        pos, vel = table.diffs[(pair, eps)]
        color = cmap(radii.index(eps) / max(1, len(radii) - 1))
        for ax, arr in zip(axes, (pos, vel)):
            y = np.arange(1, arr.size + 1) / arr.size
            ax.plot(arr, y, styles.get(pair, "-"), color=color,
                    linewidth=1.0, label=f"{pair} r={eps:g}")
    for ax, (_, _, title) in zip(axes, _KINDS[:2]):
        ax.set_title(f"{title} RMSE difference")
        ax.set_xlabel("difference vs plain filter")
        ax.axvline(0.0, color="gray", linewidth=0.6)
        ax.grid(alpha=0.3)
    axes[0].set_ylabel("empirical CDF")
    if keys:
        axes[1].legend(fontsize=6, ncol=2, loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def render_equity(reports, path) -> str:
    """Wealth curves of one or more backtest runs on shared axes."""
    if not isinstance(reports, (list, tuple)):
        reports = [reports]
    fig, ax = plt.subplots(figsize=(10, 5))
    for rep in reports:
        label = rep.mode if rep.mode == "nonrobust" \
            else f"{rep.mode} r={rep.radius:g}"
        ax.plot(np.arange(len(rep.wealth)), rep.wealth, linewidth=1.0,
                label=label)
    rep = reports[0]
    ticks = np.linspace(0, len(rep.dates) - 1, num=min(8, len(rep.dates)),
                        dtype=int)
    ax.set_xticks(ticks)
    ax.set_xticklabels([rep.dates[i] for i in ticks], rotation=30,
                       ha="right", fontsize=7)
    ax.set_ylabel("wealth")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def render_solver_trace(trace, path) -> str:
    """Objective value and minimum slack per solver iteration."""
    rows = np.array(trace.rows, dtype=float) if trace.rows else \
        np.zeros((0, 4))
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax2 = ax.twinx()
    if rows.size:
        ax.plot(rows[:, 0], rows[:, 1], "o-", color="C0", linewidth=1.0,
                markersize=3, label="objective")
        ax2.semilogy(rows[:, 0], np.maximum(rows[:, 2], 1e-300), "s--",
                     color="C1", linewidth=1.0, markersize=3,
                     label="min slack")
    ax.set_xlabel("iteration")
    ax.set_ylabel("objective", color="C0")
    ax2.set_ylabel("min slack", color="C1")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def render_loglik(loglik_path, path) -> str:
    """Data log-likelihood over EM iterations."""
    vals = np.asarray(loglik_path, dtype=float)
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.plot(np.arange(vals.size), vals, "o-", linewidth=1.0,
            markersize=3)
    ax.set_xlabel("EM iteration")
    ax.set_ylabel("log likelihood")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)
