"""Matplotlib renderings of flowpipes and learning curves.

The output format follows the file suffix (``.svg``, ``.png``, ...).
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Polygon, Rectangle  # noqa: E402

from .geometry import IntervalBox  # noqa: E402

__all__ = ["plot_flowpipe", "plot_convergence", "plot_summary"]

_UNSAFE = "#d62728"
_GOAL = "#2ca02c"
_INIT = "#1f77b4"


def _view(fps, sets) -> IntervalBox:
    """Axis limits covering the flowpipes, X0 and the goal, padded by 8%."""
    boxes = [sets.X0, sets.goal]
    for fp in fps:
        boxes += [fp.step_bounding_box(t) for t in range(len(fp))]
    hull = IntervalBox.hull(boxes)
    pad = 0.08 * np.maximum(hull.width, 1e-9)
    return IntervalBox(hull.lo - pad, hull.hi + pad)


def _rect(ax, box: IntervalBox, **kw):
    ax.add_patch(Rectangle(box.lo, *box.width, **kw))


def _draw_flowpipe(ax, fp, color, label):
    first = True
    for t in range(len(fp)):
        for poly in fp.step_polygons(t):
            ax.add_patch(
                Polygon(
                    poly.vertices,
                    closed=True,
                    facecolor=color,
                    edgecolor=color,
                    alpha=0.35,
                    lw=0.4,
                    label=label if first else None,
                )
            )
            first = False


def plot_flowpipe(path, fp, sets, title="", X_I=None, extra=None, labels=("x1", "x2")):
    """Flowpipe over X0, X_u and X_g.

    ``X_I`` (optional) is a list of certified boxes drawn hatched; ``extra`` is
    an optional second flowpipe (the goal stage of a two-stage run).
    """
    fps = [fp] + ([extra] if extra is not None else [])
    view = _view(fps, sets)
    fig, ax = plt.subplots(figsize=(6, 4.5))
    clip_lo = np.maximum(sets.unsafe.lo, view.lo)
    clip_hi = np.minimum(sets.unsafe.hi, view.hi)
    if np.all(clip_lo < clip_hi):
        _rect(ax, IntervalBox(clip_lo, clip_hi), facecolor=_UNSAFE, alpha=0.3, label="unsafe")
    _rect(ax, sets.goal, facecolor=_GOAL, alpha=0.3, label="goal")
    _draw_flowpipe(ax, fp, "#4c72b0", "flowpipe")
    if extra is not None:
        _draw_flowpipe(ax, extra, "#8c564b", "second stage")
    _rect(ax, sets.X0, fill=False, edgecolor=_INIT, lw=1.2, label="X0")
    for i, box in enumerate(X_I or []):
        _rect(ax, box, fill=False, edgecolor="black", hatch="//", lw=0.6, label="X_I" if i == 0 else None)
    ax.set_xlim(view.lo[0], view.hi[0])
    ax.set_ylim(view.lo[1], view.hi[1])
    ax.set_xlabel(labels[0])
    ax.set_ylabel(labels[1])
    if title:
        ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def plot_convergence(path, history, title=""):
    """Scores per iteration: geometric distances and Wasserstein distances."""
    it = [r["iter"] for r in history]

    def series(key):
        return np.array([np.nan if r.get(key) is None else r[key] for r in history], dtype=float)

    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.6))
    a1.plot(it, series("d_u"), label="d_u")
    a1.plot(it, series("d_g"), label="d_g")
    a1.axhline(0.0, color="grey", lw=0.6)
    a1.set_xlabel("iteration")
    a1.set_title("geometric")
    a1.legend(fontsize=8)
    a2.plot(it, series("W_goal"), label="W(r, g)")
    a2.plot(it, series("W_unsafe"), label="W(r, u)")
    a2.set_xlabel("iteration")
    a2.set_title("Wasserstein")
    a2.legend(fontsize=8)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def plot_summary(path, rows, title="learning summary"):
    """Iterations to convergence (mean and sd) and converged fraction per method."""
    names = [r["method"] for r in rows]
    y = np.arange(len(rows))
    mean = np.array([np.nan if r["iterations_mean"] is None else r["iterations_mean"] for r in rows], dtype=float)
    sd = np.array([0.0 if r["iterations_sd"] is None else r["iterations_sd"] for r in rows], dtype=float)
    frac = np.array([r["converged"] / r["runs"] for r in rows], dtype=float)
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 1.2 + 0.5 * len(rows)), sharey=True)
    a1.barh(y, np.nan_to_num(mean), xerr=sd, color="#4c72b0", capsize=3)
    a1.set_yticks(y, names, fontsize=8)
    a1.set_xlabel("iterations to certificate")
    a2.barh(y, frac, color=_GOAL)
    a2.set_xlim(0, 1)
    a2.set_xlabel("converged runs")
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)
