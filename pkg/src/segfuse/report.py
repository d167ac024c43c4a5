"""Evaluation reports: CSV tables plus PNG figures written next to them."""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .kvtext import atomic_write_bytes  # noqa: E402
from .metrics import REGIONS, CaseReport, Summary  # noqa: E402

REGION_TITLES = {
    REGIONS[0]: "Kidney + masses",
    REGIONS[1]: "Masses",
    REGIONS[2]: "Tumor",
}


def _csv_bytes(header: Sequence[str], rows: Sequence[Sequence[object]]) -> bytes:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in row])
    return buffer.getvalue().encode("utf-8")


def write_case_table(reports: Sequence[CaseReport], path) -> None:
    rows = [r.as_row() for r in reports]
    header = list(rows[0]) if rows else ["case_id"]
    atomic_write_bytes(path, _csv_bytes(header, [list(r.values()) for r in rows]))


def write_summary(summary: Summary, path) -> None:
    rows = [
        [region.label, summary.dice[region], summary.surface_dice[region]] for region in REGIONS
    ]
    rows.append(["mean", summary.mean_dice, summary.mean_surface_dice])
    header = ["region", "dice", "surface_dice"]
    atomic_write_bytes(path, _csv_bytes(header, rows) + f"# n_cases={summary.n_cases}\n".encode())


def _save(fig, path) -> None:
    buffer = io.BytesIO()
    fig.savefig(buffer, format="png", dpi=120, metadata={"Software": None})
    plt.close(fig)
    atomic_write_bytes(path, buffer.getvalue())


def plot_region_scores(reports: Sequence[CaseReport], summary: Summary, path) -> None:
    """Grouped bars of mean Dice / Surface Dice per region with per-case dots."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    x = np.arange(len(REGIONS))
    width = 0.36
    for offset, attr, color in ((-width / 2, "dice", "#4C72B0"), (width / 2, "surface_dice", "#DD8452")):
        means = [getattr(summary, attr)[r] for r in REGIONS]
        ax.bar(x + offset, means, width, label=attr.replace("_", " ").title(), color=color, alpha=0.8)
        for i, region in enumerate(REGIONS):
            values = [getattr(rep, attr)[region] for rep in reports]
            jitter = np.linspace(-width / 4, width / 4, len(values)) if len(values) > 1 else [0.0]
            ax.scatter(x[i] + offset + np.asarray(jitter), values, s=10, color="k", zorder=3)
    ax.set_xticks(x)
    ax.set_xticklabels([REGION_TITLES[r] for r in REGIONS])
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("Score")
    ax.set_title(f"Region scores ({summary.n_cases} case{'s' if summary.n_cases != 1 else ''})")
    ax.legend(loc="lower left", frameon=False)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    fig.tight_layout()
    _save(fig, path)


def plot_case_dice(reports: Sequence[CaseReport], path) -> None:
    fig, ax = plt.subplots(figsize=(max(4.0, 0.5 * len(reports) + 2.5), 3.6))
    matrix = np.array([[rep.dice[r] for r in REGIONS] for rep in reports]).T
    image = ax.imshow(matrix, vmin=0.0, vmax=1.0, cmap="viridis", aspect="auto")
    ax.set_yticks(range(len(REGIONS)))
    ax.set_yticklabels([REGION_TITLES[r] for r in REGIONS])
    ax.set_xticks(range(len(reports)))
    ax.set_xticklabels([rep.case_id for rep in reports], rotation=45, ha="right")
    fig.colorbar(image, ax=ax, label="Dice")
    fig.tight_layout()
    _save(fig, path)


def write_report(reports: Sequence[CaseReport], summary: Summary, out_dir, figures: bool = True) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [out_dir / "cases.csv", out_dir / "summary.csv"]
    write_case_table(reports, written[0])
    write_summary(summary, written[1])
    if figures:
        written += [out_dir / "region_scores.png", out_dir / "case_dice.png"]
        plot_region_scores(reports, summary, written[2])
        plot_case_dice(reports, written[3])
    return written
