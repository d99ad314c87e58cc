"""Result tables, CSV emission, and figure rendering for experiment reports.

The experiment report path writes three artifacts side by side: a delimited
CSV of per-seed and aggregate numbers, an aligned text table in the classic
benchmark layout (count columns as "mean (std)", metric columns as plain
means), and a set of PNG figures.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

METRIC_COLUMNS = ["accuracy", "precision_pos", "precision_neg", "recall_pos", "recall_neg"]
METRIC_HEADERS = {
    "accuracy": "accuracy",
    "precision_pos": "precision(+)",
    "precision_neg": "precision(-)",
    "recall_pos": "recall(+)",
    "recall_neg": "recall(-)",
}


@dataclass
class Aggregate:
    mean: float | None
    std: float | None
    n: int

    @staticmethod
    def of(values: Sequence[float | None]) -> "Aggregate":
        present = [v for v in values if v is not None]
        if not present:
            return Aggregate(None, None, 0)
        mean = float(np.mean(present))
        std = float(np.std(present, ddof=1)) if len(present) > 1 else 0.0
        return Aggregate(mean, std, len(present))


def _fmt_mean(agg: Aggregate, digits: int = 3) -> str:
    if agg.mean is None:
        return "-"
    return f"{agg.mean:.{digits}f}"


def _fmt_mean_std(agg: Aggregate, digits: int = 2) -> str:
    if agg.mean is None:
        return "-"
    return f"{agg.mean:.{digits}f} ({agg.std:.{digits}f})"


@dataclass
class ResultRow:
    """One table row: a labeling strategy with its cost and quality columns."""

    name: str
    n_query: Aggregate
    n_label: Aggregate
    metrics: Mapping[str, Aggregate]


def results_table(rows: Sequence[ResultRow]) -> str:
    """Aligned text table: counts as mean (std), metrics as 3-decimal means."""
    headers = ["strategy", "N (query)", "N (label)"] + [
        METRIC_HEADERS[c] for c in METRIC_COLUMNS
    ]
    body = []
    for row in rows:
        body.append(
            [
                row.name,
                _fmt_mean_std(row.n_query),
                _fmt_mean_std(row.n_label),
            ]
            + [_fmt_mean(row.metrics[c]) for c in METRIC_COLUMNS]
        )
    widths = [max(len(h), *(len(r[i]) for r in body)) for i, h in enumerate(headers)]
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip(),
        "  ".join("-" * w for w in widths),
    ]
    for r in body:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
    return "\n".join(lines) + "\n"


def write_results_csv(
    rows: Sequence[ResultRow], per_seed: Sequence[Mapping], path: str | Path
) -> Path:
    """Aggregates plus per-seed detail rows in one delimited file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fieldnames = (
        ["row_type", "strategy", "seed", "n_query", "n_label"]
        + [f"{c}" for c in METRIC_COLUMNS]
        + [f"{c}_std" for c in METRIC_COLUMNS]
        + ["degenerate"]
    )
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            record = {
                "row_type": "aggregate",
                "strategy": row.name,
                "seed": "",
                "n_query": row.n_query.mean,
                "n_label": row.n_label.mean,
                "degenerate": "",
            }
            for c in METRIC_COLUMNS:
                record[c] = row.metrics[c].mean
                record[f"{c}_std"] = row.metrics[c].std
            writer.writerow(record)
        for detail in per_seed:
            record = {
                "row_type": "run",
                "strategy": detail["strategy"],
                "seed": detail["seed"],
                "n_query": detail["n_query"],
                "n_label": detail["n_label"],
                "degenerate": detail.get("degenerate", False),
            }
            for c in METRIC_COLUMNS:
                record[c] = detail.get(c)
                record[f"{c}_std"] = ""
            writer.writerow(record)
    return path


# --- figures -------------------------------------------------------------------


def render_metrics_figure(rows: Sequence[ResultRow], path: str | Path) -> Path:
    """Grouped bars of mean metric values per strategy, std as error bars."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(9, 4.5))
    x = np.arange(len(METRIC_COLUMNS))
    width = 0.8 / max(1, len(rows))
    for i, row in enumerate(rows):
        means = [row.metrics[c].mean if row.metrics[c].mean is not None else 0.0 for c in METRIC_COLUMNS]
        stds = [row.metrics[c].std if row.metrics[c].std is not None else 0.0 for c in METRIC_COLUMNS]
        ax.bar(x + i * width, means, width, yerr=stds, capsize=3, label=row.name)
    ax.set_xticks(x + width * (len(rows) - 1) / 2)
    ax.set_xticklabels([METRIC_HEADERS[c] for c in METRIC_COLUMNS])
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("mean over seeds")
    ax.set_title("Downstream model quality by labeling strategy")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_seed_scatter(
    strong_acc: Sequence[float],
    weak_acc: Sequence[float],
    strong_prec: Sequence[float | None],
    weak_prec: Sequence[float | None],
    path: str | Path,
) -> Path:
    """Per-seed weak vs strong comparison with the break-even diagonal."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, axes = plt.subplots(1, 2, figsize=(9, 4.2))
    panels = [
        (axes[0], strong_acc, weak_acc, "accuracy"),
        (axes[1], strong_prec, weak_prec, "precision(+)"),
    ]
    for ax, xs, ys, title in panels:
        pairs = [(x, y) for x, y in zip(xs, ys) if x is not None and y is not None]
        if pairs:
            ax.scatter([p[0] for p in pairs], [p[1] for p in pairs], alpha=0.8)
        lim = (0.0, 1.02)
        ax.plot(lim, lim, ls="--", c="gray", lw=1)
        ax.set_xlim(*lim)
        ax.set_ylim(*lim)
        ax.set_xlabel("strong labels")
        ax.set_ylabel("weak labels")
        ax.set_title(title)
    fig.suptitle("Per-seed downstream quality: weak vs strong")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_marginal_histogram(values: Sequence[float], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(list(values), bins=20, range=(0.0, 1.0), edgecolor="black")
    ax.set_xlabel("marginal P(in intent)")
    ax.set_ylabel("candidates")
    ax.set_title("Label-model marginals")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def format_metrics_json(metrics_by_name: Mapping[str, Mapping]) -> str:
    import json

    return json.dumps(metrics_by_name, sort_keys=True, indent=2) + "\n"
