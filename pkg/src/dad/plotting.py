"""Figures written next to the CSV outputs."""
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.dpi": 120,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_loss_curve(losses, path, first_epoch=1):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        epochs = range(first_epoch, first_epoch + len(losses))
        ax.plot(list(epochs), losses, marker="o", ms=2.5, lw=1.2)
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean total loss")
        if losses and min(losses) > 0:
            ax.set_yscale("log")
        return _save(fig, path)


def plot_metric_report(report, path):
    from .metrics import METRIC_NAMES
    agg = report.aggregate
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.bar(METRIC_NAMES, [agg[k] for k in METRIC_NAMES], color="tab:blue")
        ax.set_ylim(0, 1)
        ax.set_title(f"{len(report.per_image)} images")
        ax.tick_params(axis="x", rotation=30)
        return _save(fig, path)


def plot_ablation(rows, path, metric_columns):
    """One panel per metric column, one bar per completed variant."""
    done = [r for r in rows if r.get("status") == "ok"]
    with plt.rc_context(STYLE):
        n = max(len(metric_columns), 1)
        fig, axes = plt.subplots(n, 1, figsize=(max(5, 0.35 * len(done) + 2), 2.2 * n), squeeze=False)
        for ax, col in zip(axes[:, 0], metric_columns):
            ax.bar([r["variant"] for r in done], [float(r[col]) for r in done], color="tab:gray")
            ax.set_ylabel(col)
            ax.tick_params(axis="x", rotation=60, labelsize=7)
        return _save(fig, path)


def plot_receptive_fields(rows, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        labels = [f"{r['module']}\n{r['branch']}" for r in rows]
        ax.barh(labels, [r["rf"] for r in rows], color="tab:green")
        ax.set_xlabel("theoretical receptive field (px)")
        ax.tick_params(axis="y", labelsize=6)
        ax.invert_yaxis()
        return _save(fig, path)
