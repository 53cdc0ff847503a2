"""Render completion / coupled / bench traces as figures next to the CSV.

All plots go through the Agg backend and are written to files; nothing is
shown interactively.
"""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

__all__ = ["completion_figure", "coupled_figure", "bench_figure"]

_FIGSIZE = (6.4, 4.0)


def _style(ax, xlabel, ylabel, title):
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)


def completion_figure(rows, path) -> Path:
    """Train (solid) and test (dashed) RRE per round, one color per strategy."""
    by_strategy = defaultdict(lambda: ([], [], []))
    for r in rows:
        rounds, train, test = by_strategy[r["strategy"]]
        rounds.append(float(r["round"]))
        train.append(float(r["train_rre"]))
        test.append(float(r["test_rre"]) if r.get("test_rre") not in (None, "", "nan")
                    else float("nan"))
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    for name, (rounds, train, test) in sorted(by_strategy.items()):
        line, = ax.semilogy(rounds, train, "-", label=f"{name} train")
        ax.semilogy(rounds, test, "--", color=line.get_color(),
                    label=f"{name} test")
    _style(ax, "round", "relative reconstruction error", "completion fit")
    ax.legend(fontsize=8)
    path = Path(path)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def coupled_figure(rows, path) -> Path:
    """Observed-entry and full MSE per half-step."""
    steps = range(len(rows))
    train = [float(r["mse_train"]) for r in rows]
    full = [float(r["mse_full"]) for r in rows]
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.semilogy(list(steps), train, "-", label="observed entries")
    ax.semilogy(list(steps), full, "--", label="all entries")
    _style(ax, "half-step", "mean squared error", "coupled matrix fit")
    ax.legend(fontsize=8)
    path = Path(path)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def bench_figure(rows, path) -> Path:
    """Total wall time and final test error as functions of the mask rate."""
    by_strategy = defaultdict(lambda: ([], [], []))
    for r in rows:
        ps, walls, errs = by_strategy[r["strategy"]]
        ps.append(float(r["p"]))
        walls.append(float(r["total_wall_ms"]))
        errs.append(float(r["final_test_rre"]))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.6, 4.0))
    positive_walls = all(w > 0 for _, walls, _ in by_strategy.values() for w in walls)
    for name, (ps, walls, errs) in sorted(by_strategy.items()):
        order = sorted(range(len(ps)), key=lambda i: ps[i])
        ps_s = [ps[i] for i in order]
        ax1.plot(ps_s, [walls[i] for i in order], "o-", label=name)
        ax2.semilogy(ps_s, [errs[i] for i in order], "o-", label=name)
    ax1.set_xscale("log")
    ax2.set_xscale("log")
    if positive_walls:
        ax1.set_yscale("log")
    _style(ax1, "observation rate p", "total wall time (ms)", "running time")
    _style(ax2, "observation rate p", "final test RRE", "solution quality")
    ax1.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path
