"""SVG figure emitters for tradeoff curves, region snapshots, and statistic
trajectories.  One chart per file; rendered with the Agg backend so runs are
headless-safe.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .events import Domain, EventStream
from .regions import RegionUnion

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def plot_tradeoff(rows: list[dict], path, metric: str = "edd") -> None:
    """Metric versus average run length, one curve per detector, log-x."""
    fig, ax = plt.subplots(figsize=(5, 3.4))
    by_det: dict[str, list[dict]] = {}
    for row in rows:
        by_det.setdefault(row["detector"], []).append(row)
    for i, (det, rs) in enumerate(sorted(by_det.items())):
        rs = sorted(rs, key=lambda r: r["arl"])
        xs = [r["arl"] for r in rs]
        key = metric if metric in rs[0] else "edd"
        ys = [r[key] if r[key] is not None else np.nan for r in rs]
        ax.plot(xs, ys, marker="o", ms=3.5, lw=1.2,
                color=_COLORS[i % len(_COLORS)], label=det)
    ax.set_xscale("log")
    ax.set_xlabel("average run length")
    ax.set_ylabel({"edd": "detection delay", "jaccard": "Jaccard index"}.get(metric, metric))
    ax.legend(fontsize=7, frameon=False)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def _draw_region(ax, region: RegionUnion, color: str, alpha: float = 0.45):
    for box in region.boxes:
        ax.add_patch(plt.Rectangle((box[0], box[1]), box[2] - box[0],
                                   box[3] - box[1], facecolor=color,
                                   edgecolor="none", alpha=alpha))


def plot_region_snapshots(snapshots: list[tuple[float, RegionUnion]],
                          true_omega: RegionUnion, domain: Domain, path,
                          stream: EventStream | None = None) -> None:
    """Row of panels: estimated region per snapshot over the true region."""
    n = len(snapshots)
    fig, axes = plt.subplots(1, max(n, 1), figsize=(2.4 * max(n, 1), 2.6),
                             squeeze=False)
    x0, y0, x1, y1 = domain.s_bounds
    for ax, (t_snap, region) in zip(axes[0], snapshots):
        if stream is not None and len(stream):
            seen = stream.t <= t_snap
            ax.plot(stream.s[seen, 0], stream.s[seen, 1], ".", color="0.75",
                    ms=1.5, zorder=0)
        _draw_region(ax, true_omega, "#aaaaaa", alpha=0.35)
        _draw_region(ax, region, "#1f77b4", alpha=0.5)
        ax.set_xlim(x0, x1)
        ax.set_ylim(y0, y1)
        ax.set_aspect("equal")
        ax.set_title(f"t = {t_snap:g}", fontsize=8)
        ax.tick_params(labelsize=6)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_trajectory(trajectory_t: np.ndarray, trajectory_w: np.ndarray, path,
                    gamma: float | None = None, tau: float | None = None) -> None:
    fig, ax = plt.subplots(figsize=(5, 2.8))
    ax.step(trajectory_t, trajectory_w, where="post", lw=1.0, color="#1f77b4")
    if gamma is not None and np.isfinite(gamma):
        ax.axhline(gamma, color="#d62728", lw=0.9, ls="--", label="threshold")
    if tau is not None:
        ax.axvline(tau, color="0.4", lw=0.9, ls=":", label="change time")
    ax.set_xlabel("time")
    ax.set_ylabel("statistic")
    if gamma is not None or tau is not None:
        ax.legend(fontsize=7, frameon=False)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
