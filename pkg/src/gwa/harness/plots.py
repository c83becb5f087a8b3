"""Static figures and CSV export for run reports.

SVG output is pinned for byte stability: fixed hash salt, no embedded
timestamps.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "gwa"

_SAVE_KW = {"format": "svg", "metadata": {"Date": None}}

SERIES_COLUMNS = [
    "epoch",
    "train_acc",
    "val_acc",
    "test_acc",
    "gwa",
    "m1",
    "m2",
    "excess_kurtosis",
    "prediction_change",
    "count",
    "excluded",
]


def _minmax(values: list[Optional[float]]) -> np.ndarray:
    arr = np.array([np.nan if v is None else v for v in values], dtype=np.float64)
    finite = np.isfinite(arr)
    if finite.sum() < 2:
        return arr
    lo, hi = arr[finite].min(), arr[finite].max()
    if hi == lo:
        return np.where(finite, 0.5, np.nan)
    return (arr - lo) / (hi - lo)


def write_series_csv(report: dict, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SERIES_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row in report["epochs"]:
            writer.writerow({k: row.get(k) for k in SERIES_COLUMNS})


def plot_overlay(report: dict, path: Path) -> None:
    """Min-max normalized series overlay with decision markers."""
    epochs = [row["epoch"] for row in report["epochs"]]
    fig, ax = plt.subplots(figsize=(7, 4))
    for key, label in [
        ("val_acc", "val accuracy"),
        ("test_acc", "test accuracy"),
        ("gwa", "gwa"),
        ("prediction_change", "prediction change"),
    ]:
        values = [row.get(key) for row in report["epochs"]]
        if all(v is None for v in values):
            continue
        ax.plot(epochs, _minmax(values), label=label, linewidth=1.2)
    for name, marker in [("gwa_scratch", "o"), ("labelwave", "s"), ("val_accuracy", "^")]:
        decision = report.get("decisions", {}).get(name)
        if decision:
            ax.axvline(decision["selected_epoch"], linestyle="--", alpha=0.4)
            ax.plot([decision["selected_epoch"]], [1.02], marker=marker, clip_on=False)
    ax.set_xlabel("epoch")
    ax.set_ylabel("normalized value")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def plot_histogram(
    scores: np.ndarray,
    epoch: int,
    path: Path,
    flipped_ids: Optional[np.ndarray] = None,
    bins: int = 60,
) -> dict:
    """Alignment-score histogram for one epoch, optionally split by flip mask.

    Returns bin bookkeeping so callers can assert conservation.
    """
    rows = scores[scores["epoch"] == epoch]
    defined = ~np.isnan(rows["gamma"])
    gamma = rows["gamma"][defined].astype(np.float64)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    edges = np.linspace(-1, 1, bins + 1)
    if flipped_ids is not None and len(flipped_ids):
        is_flipped = np.isin(rows["sample_id"][defined], flipped_ids)
        counts_clean, _ = np.histogram(gamma[~is_flipped], bins=edges)
        counts_flip, _ = np.histogram(gamma[is_flipped], bins=edges)
        ax.bar(edges[:-1], counts_clean, width=np.diff(edges), align="edge",
               alpha=0.6, label="clean")
        ax.bar(edges[:-1], counts_flip, width=np.diff(edges), align="edge",
               alpha=0.6, label="flipped")
        ax.legend(fontsize=8)
        total = int(counts_clean.sum() + counts_flip.sum())
        means = {
            "clean_mean": float(gamma[~is_flipped].mean()) if (~is_flipped).any() else None,
            "flipped_mean": float(gamma[is_flipped].mean()) if is_flipped.any() else None,
        }
    else:
        counts, _ = np.histogram(gamma, bins=edges)
        ax.bar(edges[:-1], counts, width=np.diff(edges), align="edge", alpha=0.8)
        total = int(counts.sum())
        means = {"mean": float(gamma.mean()) if len(gamma) else None}
    ax.set_xlabel("alignment score")
    ax.set_ylabel("samples")
    ax.set_title(f"epoch {epoch}")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return {
        "epoch": epoch,
        "binned": total,
        "defined": int(defined.sum()),
        "excluded": int(len(rows) - defined.sum()),
        **means,
    }


def emit_plots(report: dict, out_dir, scores: Optional[np.ndarray] = None) -> list[str]:
    """Write the CSV plus overlay/histogram figures; returns created names."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    created = []

    write_series_csv(report, out_dir / "series.csv")
    created.append("series.csv")

    if report["epochs"]:
        plot_overlay(report, out_dir / "overlay.svg")
        created.append("overlay.svg")

    if scores is not None and len(scores) and report["epochs"]:
        epochs = [row["epoch"] for row in report["epochs"]]
        selected = report.get("decisions", {}).get("gwa_scratch", {}).get(
            "selected_epoch", epochs[-1]
        )
        flipped = np.asarray(report.get("flipped_sample_ids", []), dtype=np.uint64)
        for epoch in sorted({epochs[0], selected, epochs[-1]}):
            name = f"hist_epoch_{epoch:04d}.svg"
            plot_histogram(scores, epoch, out_dir / name)
            created.append(name)
        if len(flipped):
            name = f"hist_split_epoch_{selected:04d}.svg"
            plot_histogram(scores, selected, out_dir / name, flipped_ids=flipped)
            created.append(name)
    return created
