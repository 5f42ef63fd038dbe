"""Text, CSV and figure renderings of an evaluation report."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402 - backend must be set first

from .metrics import EvalReport

_METRICS = ("mae", "s_measure", "e_measure", "weighted_f", "composite")
_BUCKET_ORDER = ("0", "1", "2", "3+")


def _rows(report: EvalReport) -> list[dict]:
    rows = []
    if report.overall:
        rows.append({"bucket": "all", **report.overall,
                     "composite_rel_change_pct": None})
    for name in _BUCKET_ORDER:
        if name in report.buckets:
            rows.append({"bucket": name, **report.buckets[name]})
    return rows


def _fmt(value, width) -> str:
    if value is None:
        return "-".rjust(width)
    if isinstance(value, float):
        return f"{value:.4f}".rjust(width)
    return str(value).rjust(width)


def write_text(report: EvalReport, path: str | Path) -> None:
    header = ["bucket", "count", "mae", "s_measure", "e_measure",
              "weighted_f", "composite", "rel_change_%"]
    widths = [7, 6, 8, 10, 10, 11, 10, 13]
    lines = ["".join(h.rjust(w) for h, w in zip(header, widths))]
    for row in _rows(report):
        cells = [row["bucket"], row["count"], row["mae"], row["s_measure"],
                 row["e_measure"], row["weighted_f"], row["composite"],
                 row["composite_rel_change_pct"]]
        lines.append("".join(_fmt(c, w) for c, w in zip(cells, widths)))
    for note in report.notes:
        lines.append(f"note: {note}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_csv(report: EvalReport, path: str | Path) -> None:
    fields = ["bucket", "count", "mae", "s_measure", "e_measure",
              "weighted_f", "composite", "composite_rel_change_pct"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        for row in _rows(report):
            writer.writerow(row)


def write_figures(report: EvalReport, out_dir: str | Path) -> list[Path]:
    """Bar charts: composite per bucket, and the four metrics side by side."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    buckets = [b for b in _BUCKET_ORDER if b in report.buckets]
    if not buckets:
        return []
    written = []

    fig, ax = plt.subplots(figsize=(5, 3.2))
    values = [report.buckets[b]["composite"] for b in buckets]
    ax.bar(buckets, values, color="#4878d0")
    if report.overall:
        ax.axhline(report.overall["composite"], color="#d65f5f",
                   linestyle="--", linewidth=1, label="all images")
        ax.legend(frameon=False, fontsize=8)
    ax.set_xlabel("instances in ground truth")
    ax.set_ylabel("composite score")
    fig.tight_layout()
    path = out / "composite_by_bucket.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(6, 3.2))
    metrics = ("mae", "s_measure", "e_measure", "weighted_f")
    width = 0.8 / len(metrics)
    for i, metric in enumerate(metrics):
        xs = [j + (i - (len(metrics) - 1) / 2) * width
              for j in range(len(buckets))]
        ax.bar(xs, [report.buckets[b][metric] for b in buckets],
               width=width, label=metric)
    ax.set_xticks(range(len(buckets)))
    ax.set_xticklabels(buckets)
    ax.set_xlabel("instances in ground truth")
    ax.set_ylim(0.0, 1.05)
    ax.legend(frameon=False, fontsize=8, ncol=2)
    fig.tight_layout()
    path = out / "metrics_by_bucket.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)
    return written


def render_all(report: EvalReport, out_dir: str | Path) -> dict:
    """Write report.txt, report.csv and figures/ under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_text(report, out / "report.txt")
    write_csv(report, out / "report.csv")
    figures = write_figures(report, out / "figures")
    return {
        "text": out / "report.txt",
        "csv": out / "report.csv",
        "figures": figures,
    }
