"""Render stored run/sweep artifacts into summary tables and figures.

Reads the CSV/JSON files that train/attack/sweep leave behind and writes a
delimited summary plus matplotlib PNGs next to it: training curves, score
histograms, the distance-to-boundary histogram, and the privacy-utility
frontier for sweeps.
"""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["render_run_report", "render_sweep_report", "format_table"]

_HIST_PREFIX = "hist_"


def format_table(headers: list[str], rows: list[list]) -> str:
    """Fixed-width text table for terminal output."""
    cells = [[str(h) for h in headers]] + [
        [f"{v:.4f}" if isinstance(v, float) else str(v) for v in row] for row in rows
    ]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = []
    for i, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _read_csv(path: str) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def _plot_training_curves(history: list[dict], out_path: str) -> None:
    epochs = [int(r["epoch"]) for r in history]
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(10, 4))
    for key, label in (("loss_rce", "classification"), ("loss_rcl", "center"), ("loss_total", "total")):
        ax_loss.plot(epochs, [float(r[key]) for r in history], label=label)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("mean batch loss")
    ax_loss.legend()
    ax_acc.plot(epochs, [float(r["train_acc"]) for r in history], label="train")
    ax_acc.plot(epochs, [float(r["test_acc"]) for r in history], label="test")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.set_ylim(0.0, 1.05)
    ax_acc.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def _plot_histogram_csv(path: str, title: str, out_path: str) -> None:
    rows = _read_csv(path)
    lefts = np.array([float(r["bin_left"]) for r in rows])
    rights = np.array([float(r["bin_right"]) for r in rows])
    widths = rights - lefts
    mem = np.array([int(r["member_count"]) for r in rows], dtype=float)
    non = np.array([int(r["nonmember_count"]) for r in rows], dtype=float)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(lefts, mem, width=widths, align="edge", alpha=0.55, label="members")
    ax.bar(lefts, non, width=widths, align="edge", alpha=0.55, label="non-members")
    ax.set_title(title)
    ax.set_xlabel("score")
    ax.set_ylabel("count")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def render_run_report(run_dir: str, out_dir: str | None = None) -> list[str]:
    """Summarize one train/attack output directory; returns written paths."""
    out_dir = out_dir or run_dir
    os.makedirs(out_dir, exist_ok=True)
    written: list[str] = []

    history_path = os.path.join(run_dir, "history.csv")
    if os.path.exists(history_path):
        history = _read_csv(history_path)
        fig_path = os.path.join(out_dir, "training_curves.png")
        _plot_training_curves(history, fig_path)
        written.append(fig_path)

    reports_path = os.path.join(run_dir, "attack_reports.json")
    summary_rows: list[list] = []
    if os.path.exists(reports_path):
        with open(reports_path, encoding="utf-8") as fh:
            reports = json.load(fh)
        for rep in reports:
            summary_rows.append(
                [rep["attack"], float(rep["auc"]), float(rep["thresholded_accuracy"])]
            )
        summary_path = os.path.join(out_dir, "summary.csv")
        with open(summary_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["attack", "auc", "thresholded_accuracy"])
            for row in summary_rows:
                writer.writerow([row[0], repr(row[1]), repr(row[2])])
        written.append(summary_path)

    for name in sorted(os.listdir(run_dir)):
        if name.startswith(_HIST_PREFIX) and name.endswith(".csv"):
            stem = name[: -len(".csv")]
            fig_path = os.path.join(out_dir, f"{stem}.png")
            _plot_histogram_csv(
                os.path.join(run_dir, name), stem[len(_HIST_PREFIX) :], fig_path
            )
            written.append(fig_path)
    return written


def render_sweep_report(sweep_dir: str, out_dir: str | None = None) -> list[str]:
    """Plot the privacy-utility frontier from a sweep.csv directory."""
    out_dir = out_dir or sweep_dir
    os.makedirs(out_dir, exist_ok=True)
    rows = _read_csv(os.path.join(sweep_dir, "sweep.csv"))
    if not rows:
        return []
    auc_cols = [c for c in rows[0] if c.startswith("auc_")]
    fig, ax = plt.subplots(figsize=(6, 4.5))
    test_acc = [float(r["test_acc"]) for r in rows]
    for col in auc_cols:
        ax.scatter([float(r[col]) for r in rows], test_acc, label=col[len("auc_") :])
    ax.set_xlabel("attack AUC (lower = more private)")
    ax.set_ylabel("test accuracy")
    ax.legend()
    fig.tight_layout()
    fig_path = os.path.join(out_dir, "frontier.png")
    fig.savefig(fig_path, dpi=150)
    plt.close(fig)
    return [fig_path]
