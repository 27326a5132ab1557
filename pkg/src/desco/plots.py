"""Batch plotting of training histories and metric reports (PNG files)."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["plot_history", "plot_report"]


def _read_history(path):
    rows = []
    with open(path) as fh:
        for row in csv.DictReader(fh):
            rows.append(row)
    return rows


def _series(rows, key, cast=float):
    xs, ys = [], []
    for row in rows:
        if row.get(key, "") != "":
            xs.append(int(row["iter"]))
            ys.append(cast(row[key]))
    return xs, ys


def plot_history(history_csv, out_dir) -> list[str]:
    """Validation-dice, loss, and schedule curves from a history CSV."""
    rows = _read_history(history_csv)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    fig, ax = plt.subplots(figsize=(7, 4))
    for key, label in (("val_dice_a", "model a"), ("val_dice_b", "model b"),
                       ("val_dice_ens", "ensemble")):
        xs, ys = _series(rows, key)
        if xs:
            ax.plot(xs, ys, label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel("validation Dice")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = out / "val_dice.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(str(path))

    fig, ax = plt.subplots(figsize=(7, 4))
    for key in ("loss_sup_a", "loss_sup_b", "loss_cross_a", "loss_cross_b"):
        xs, ys = _series(rows, key)
        if xs:
            ax.plot(xs, ys, label=key, alpha=0.7, linewidth=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = out / "losses.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(str(path))

    fig, ax = plt.subplots(figsize=(7, 4))
    for key in ("alpha", "lambda", "mask_frac"):
        xs, ys = _series(rows, key)
        ax.plot(xs, ys, label=key)
    xs, ys = _series(rows, "lr")
    ax.plot(xs, [y / max(ys) for y in ys], label="lr (scaled)", linestyle="--")
    ax.set_xlabel("iteration")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = out / "schedules.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(str(path))
    return written


def plot_report(report_json, out_dir) -> list[str]:
    """Bar chart of aggregate metrics from an evaluation report."""
    report = json.loads(Path(report_json).read_text())
    agg = report["aggregate"]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    for ax, keys, title in (
        (axes[0], ("dice", "jaccard"), "overlap"),
        (axes[1], ("hd95", "asd"), "surface distance (voxels)"),
    ):
        names = list(keys)
        means = [agg[k]["mean"] for k in names]
        stds = [agg[k]["std"] for k in names]
        ax.bar(names, means, yerr=stds, capsize=4, color=["#4878d0", "#ee854a"])
        ax.set_title(title)
        ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    path = out / "metrics.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return [str(path)]
