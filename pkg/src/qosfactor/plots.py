"""Figure rendering for grid results.

Renders error curves (one line per method) against whichever ratio varies,
writing PNG files next to the delimited output.  Import stays lazy-friendly:
the Agg backend is forced so rendering works headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .experiment import ResultRecord

_METRIC_FIELDS = (("mean_mae", "MAE"), ("mean_rmse", "RMSE"))


def _curves(records: list[ResultRecord], x_field: str, fixed_field: str):
    """Group records into {(method, fixed value): sorted [(x, record)]}."""
    grouped: dict[tuple, list] = {}
    for r in records:
        key = (r.method, getattr(r, fixed_field))
        grouped.setdefault(key, []).append((getattr(r, x_field), r))
    for series in grouped.values():
        series.sort(key=lambda pair: pair[0])
    return grouped


def _plot_axis(ax, grouped, y_field: str, x_label: str, y_label: str, fixed_label: str):
    many_fixed = len({key[1] for key in grouped}) > 1
    for (method, fixed), series in sorted(grouped.items()):
        xs = [x for x, _ in series]
        ys = [getattr(r, y_field) for _, r in series]
        label = f"{method}, {fixed_label}={fixed:g}" if many_fixed else method
        ax.plot(xs, ys, marker="o", label=label)
    ax.set_xlabel(x_label)
    ax.set_ylabel(y_label)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)


def render_grid_figures(records: list[ResultRecord], out_dir, stem: str = "grid") -> list[Path]:
    """Write error-vs-ratio figures for the given records; returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if not records:
        return written

    train_vals = sorted({r.train_ratio for r in records})
    outlier_vals = sorted({r.outlier_ratio for r in records})

    specs = []
    if len(train_vals) > 1 or len(outlier_vals) == 1:
        specs.append(("train_ratio", "outlier_ratio", "training ratio", "outlier ratio", "train"))
    if len(outlier_vals) > 1:
        specs.append(("outlier_ratio", "train_ratio", "outlier ratio", "training ratio", "outlier"))

    for x_field, fixed_field, x_label, fixed_label, tag in specs:
        grouped = _curves(records, x_field, fixed_field)
        fig, axes = plt.subplots(1, 2, figsize=(9, 3.4))
        for ax, (y_field, y_label) in zip(axes, _METRIC_FIELDS):
            _plot_axis(ax, grouped, y_field, x_label, y_label, fixed_label)
        fig.tight_layout()
        path = out_dir / f"{stem}_error_vs_{tag}_ratio.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    if any(r.mean_fit_seconds > 0 for r in records):
        grouped = _curves(records, "train_ratio", "outlier_ratio")
        fig, ax = plt.subplots(figsize=(4.8, 3.4))
        _plot_axis(ax, grouped, "mean_fit_seconds", "training ratio", "fit seconds", "outlier ratio")
        fig.tight_layout()
        path = out_dir / f"{stem}_fit_seconds.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written
