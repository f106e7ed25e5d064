"""Render experiment metric curves to SVG files with matplotlib."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .experiments import MetricRow

__all__ = ["emit_svg"]

_COLORS = {"fair": "tab:blue", "closest": "tab:orange", "unsplittable": "tab:green"}
_STYLES = {
    "max_share": "-",
    "min_share": "--",
    "large_share": "-",
    "small_max_share": "-",
    "small_min_share": "--",
}


def _plot_metrics(rows, metrics, xlabel, ylabel, title, path):
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    for policy in ("fair", "closest", "unsplittable"):
        series = sorted((r for r in rows if r.policy == policy), key=lambda r: r.sweep)
        xs = [r.sweep for r in series]
        for metric in metrics:
            ys = [r.means[metric] for r in series]
            es = [r.stderrs[metric] for r in series]
            label = f"{policy} ({metric.replace('_', ' ')})"
            ax.plot(xs, ys, _STYLES.get(metric, "-"), color=_COLORS[policy],
                    marker="o", markersize=3, label=label)
            ax.fill_between(
                xs,
                [y - e for y, e in zip(ys, es)],
                [y + e for y, e in zip(ys, es)],
                color=_COLORS[policy],
                alpha=0.15,
                linewidth=0,
            )
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def emit_svg(rows: list[MetricRow], out_dir, kind: str) -> list[Path]:
    """Write one SVG per metric group; returns the created paths."""
    if not rows:
        raise ValueError("no rows to plot")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    if kind == "single-tier":
        path = out_dir / "single_tier_load_shares.svg"
        _plot_metrics(
            rows, ("max_share", "min_share"),
            "mean coverage number", "load share",
            "Min/max load share per station", path,
        )
        paths.append(path)
    elif kind == "two-tier":
        p1 = out_dir / "two_tier_large_share.svg"
        _plot_metrics(
            rows, ("large_share",),
            "small:large station ratio", "aggregate traffic share of large stations",
            "Traffic kept on the large tier", p1,
        )
        p2 = out_dir / "two_tier_small_load_shares.svg"
        _plot_metrics(
            rows, ("small_max_share", "small_min_share"),
            "small:large station ratio", "load share",
            "Min/max load share among small stations", p2,
        )
        paths.extend([p1, p2])
    else:
        raise ValueError("kind must be 'single-tier' or 'two-tier'")
    return paths
